//! End-to-end checks of the cell, macro and fine stages against closed forms
//! computed independently by composite Simpson quadrature.

use std::f64::consts::PI;

use proptest::prelude::*;
use twoscale_core::cell::{CellOptions, CellSolver, ParameterGrid};
use twoscale_core::coefficients::{Coefficient, CoefficientFamily, CoefficientModel, MatrixParam, Profile, SourceModel};
use twoscale_core::grid::MacroField;
use twoscale_core::macro_solver::{solve_homogenized, MacroOptions};
use twoscale_core::tensor;
use twoscale_core::two_scale::{fine_grid_for, reconstruct, remainder, solve_fine, FineOptions};
use twoscale_core::{CellGrid, Grid, MacroGrid};

fn a(y: f64) -> f64 {
    2.0 + (2.0 * PI * y).sin()
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn smooth_1d() -> CoefficientModel {
    CoefficientModel::smooth_periodic(1, 2.0, 1.0, 1.0).unwrap()
}

#[test]
fn fine_solution_converges_to_two_quadratures() {
    let model = smooth_1d();
    let eps = 0.125;
    // u' = (C - x) / a(x/eps) with C fixed by u(1) = 0
    let inv = |x: f64| 1.0 / a(x / eps);
    let c = simpson(|x| x * inv(x), 0.0, 1.0, 20_000) / simpson(inv, 0.0, 1.0, 20_000);
    let exact = |x: f64| if x == 0.0 { 0.0 } else { simpson(|t| (c - t) * inv(t), 0.0, x, 4000) };
    let mut errors = Vec::new();
    for p in [16, 32] {
        let fine = fine_grid_for(1, eps, p).unwrap();
        let (u, rep) = solve_fine(&model, eps, &fine, &FineOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        let worst = (0..fine.node_count())
            .step_by(p / 8)
            .map(|n| (u.values()[n] - exact(fine.node_coords(n)[0])).abs())
            .fold(0.0f64, f64::max);
        errors.push(worst);
    }
    // element means of a replace its harmonic mean: O((h/eps)^2) nodal error
    let ratio = errors[0] / errors[1];
    assert!((3.5..4.5).contains(&ratio), "errors {errors:?}");
    assert!(errors[1] < 5e-5, "errors {errors:?}");
}

#[test]
fn first_order_term_matches_closed_form() {
    let model = smooth_1d();
    let cell = CellGrid::new(1, 256).unwrap();
    let solver = CellSolver::new(&model, cell, CellOptions::default()).unwrap();
    let params = ParameterGrid::for_model(&model, None, None).unwrap();
    let (set, a0) = solver.build_tables(&params).unwrap();
    let mac = MacroGrid::new(1, 64).unwrap();
    let (u0, _) = solve_homogenized(&a0, &model, &mac, &cell, &MacroOptions::default()).unwrap();
    let eps = 1.0 / 16.0;
    let fine = fine_grid_for(1, eps, 16).unwrap();
    let exp = reconstruct(&u0, &set, eps, &fine).unwrap();

    // N' = -1 + a0 / a with zero mean; u0' = (1 - 2x) / (2 a0)
    let a0 = 3f64.sqrt();
    let raw = |y: f64| simpson(|t| a0 / a(t) - 1.0, 0.0, y, 2000);
    let mean = simpson(|y| if y == 0.0 { 0.0 } else { raw(y) }, 0.0, 1.0, 200);
    let n = |y: f64| if y == 0.0 { -mean } else { raw(y) - mean };
    let mut worst = 0.0f64;
    for node in (0..fine.node_count()).step_by(5) {
        let x = fine.node_coords(node)[0];
        let y = (x / eps).fract();
        let expected = n(y) * (1.0 - 2.0 * x) / (2.0 * a0);
        worst = worst.max((exp.u1[node] - expected).abs());
    }
    assert!(worst < 1e-5, "u1 error {worst:e}");
}

#[test]
fn reconstruction_is_linear_in_macro_gradient() {
    let model = smooth_1d();
    let cell = CellGrid::new(1, 64).unwrap();
    let solver = CellSolver::new(&model, cell, CellOptions::default()).unwrap();
    let params = ParameterGrid::for_model(&model, None, None).unwrap();
    let (set, _) = solver.build_tables(&params).unwrap();
    let mac = MacroGrid::new(1, 32).unwrap();
    let base: Vec<f64> = (0..mac.node_count())
        .map(|n| {
            let x = mac.node_coords(n)[0];
            (PI * x).sin() + x * x
        })
        .collect();
    let doubled: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
    let fine = fine_grid_for(1, 0.125, 16).unwrap();
    let e1 = reconstruct(&MacroField::new(mac, base).unwrap(), &set, 0.125, &fine).unwrap();
    let e2 = reconstruct(&MacroField::new(mac, doubled).unwrap(), &set, 0.125, &fine).unwrap();
    for (a, b) in e1.u1.iter().zip(&e2.u1) {
        assert!((2.0 * a - b).abs() <= 1e-14 * (1.0 + a.abs()));
    }
}

#[test]
fn remainder_restores_fine_solution() {
    let model = smooth_1d();
    let cell = CellGrid::new(1, 64).unwrap();
    let solver = CellSolver::new(&model, cell, CellOptions::default()).unwrap();
    let params = ParameterGrid::for_model(&model, None, None).unwrap();
    let (set, a0) = solver.build_tables(&params).unwrap();
    let mac = MacroGrid::new(1, 32).unwrap();
    let (u0, _) = solve_homogenized(&a0, &model, &mac, &cell, &MacroOptions::default()).unwrap();
    let eps = 0.125;
    let fine = fine_grid_for(1, eps, 8).unwrap();
    let (u, _) = solve_fine(&model, eps, &fine, &FineOptions::default()).unwrap();
    let exp = reconstruct(&u0, &set, eps, &fine).unwrap();
    let zero = exp.truncated(0).unwrap();
    assert_eq!(zero, exp.u0);
    for order in 0..=2 {
        let z = remainder(&u, &exp, order).unwrap();
        let tilde = exp.truncated(order).unwrap();
        for ((zi, ti), ui) in z.z.values().iter().zip(&tilde).zip(u.values()) {
            // one rounding of the subtraction, undone up to one ulp
            let ulp = f64::EPSILON * ui.abs().max(ti.abs());
            assert!((zi + ti - ui).abs() <= ulp, "{zi} + {ti} != {ui}");
        }
        let bound = eps * exp.u1.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + eps * eps * exp.u2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(z.boundary_max <= bound + 1e-15);
    }
}

#[test]
fn u_independent_fine_problem_takes_one_picard_step() {
    let model = CoefficientModel::new(
        2,
        CoefficientFamily::SmoothPeriodic {
            profile: Profile {
                base: 2.0,
                amplitude: 1.0,
                frequencies: [1, 1],
                x_modulation: 0.3,
            },
            matrix: MatrixParam::Scalar(1.0),
        },
        SourceModel::constant(1.0),
        [0.0, 1.0],
    )
    .unwrap();
    let fine = fine_grid_for(2, 0.25, 8).unwrap();
    let (_, rep) = solve_fine(&model, 0.25, &fine, &FineOptions::default()).unwrap();
    assert_eq!(rep.iterations, 1);
}

#[test]
fn eps_independent_model_gives_same_fine_solution() {
    let model = CoefficientModel::constant(1, 1.5, 1.0).unwrap();
    let coarse = fine_grid_for(1, 0.25, 8).unwrap();
    let fine = fine_grid_for(1, 0.125, 8).unwrap();
    let (uc, _) = solve_fine(&model, 0.25, &coarse, &FineOptions::default()).unwrap();
    let (uf, _) = solve_fine(&model, 0.125, &fine, &FineOptions::default()).unwrap();
    for (n, v) in uc.values().iter().enumerate() {
        assert!((v - uf.values()[2 * n]).abs() < 1e-12);
    }
}

#[test]
fn q_parts_combine_to_direct_solve() {
    let model = CoefficientModel::new(
        2,
        CoefficientFamily::Separated {
            mu0: 1.0,
            mu_u2: 0.5,
            mu_x: 0.25,
            g: Profile::sine(2.0, 1.0),
            matrix: MatrixParam::Full([[1.0, 0.2], [0.2, 1.3]]),
        },
        SourceModel::constant(1.0),
        [0.0, 1.0],
    )
    .unwrap();
    let cell = CellGrid::new(2, 16).unwrap();
    let solver = CellSolver::new(&model, cell, CellOptions::default()).unwrap();
    let params = ParameterGrid::for_model(&model, Some(3), Some(3)).unwrap();
    let ctx = solver.q_context(&params).unwrap();
    let g = [0.7, -1.3];
    for s in [0, 4, params.len() - 1] {
        let (parts, _) = ctx.solve_q_parts(s).unwrap();
        let direct = ctx.solve_q(s, &g).unwrap();
        for k in 0..2 {
            let scale = direct[k].values().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..cell.dof_count() {
                let combined = parts.base[k].values()[i]
                    + g[0] * parts.gradient[k][0].values()[i]
                    + g[1] * parts.gradient[k][1].values()[i];
                assert!((combined - direct[k].values()[i]).abs() <= 1e-7 * scale);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn homogenized_tensor_symmetric_and_bounded(
        base in 1.5f64..3.0,
        amp in -1.0f64..1.0,
        off in -0.4f64..0.4,
        fy in 0u32..3,
    ) {
        let model = CoefficientModel::new(
            2,
            CoefficientFamily::SmoothPeriodic {
                profile: Profile { base, amplitude: amp, frequencies: [1, fy], x_modulation: 0.0 },
                matrix: MatrixParam::Full([[1.0, off], [off, 1.2]]),
            },
            SourceModel::constant(1.0),
            [0.0, 1.0],
        )
        .unwrap();
        let cell = CellGrid::new(2, 8).unwrap();
        let solver = CellSolver::new(&model, cell, CellOptions::default()).unwrap();
        let n = solver.solve_n(0.5, &[0.5, 0.5]).unwrap();
        let s = solver.compute_a0(0.5, &[0.5, 0.5], &n).unwrap();
        prop_assert!(s.asymmetry <= 1e-8);
        let lam = model.ellipticity()[1].max(1.0);
        let lower = tensor::sym_eigenvalues(&tensor::sub(&s.a0, &s.reuss), 2)[0];
        let upper = tensor::sym_eigenvalues(&tensor::sub(&s.voigt, &s.a0), 2)[0];
        prop_assert!(lower >= -1e-10 * lam && upper >= -1e-10 * lam);
        for f in &n {
            prop_assert!(f.mean().abs() <= 1e-12);
        }
    }
}
