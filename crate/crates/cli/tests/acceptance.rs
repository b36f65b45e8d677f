//! Acceptance suite: thirteen criteria, one PASS/FAIL line each. Exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use serde_json::json;
use twoscale_cli::{run_command, Command, ExperimentConfig};
use twoscale_core::analysis::{antiderivative_lemma_1d, ErrorReport, ErrorRow};
use twoscale_core::cell::{CellOptions, CellSolver, ParameterGrid};
use twoscale_core::coefficients::{Coefficient, CoefficientFamily, CoefficientModel, MatrixParam, Profile, SourceModel};
use twoscale_core::grid::CellGrid;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn experiment_one() -> serde_json::Value {
    json!({
        "problem": {
            "dim": 1,
            "coefficient": {"family": "SMOOTH_PERIODIC", "profile": {"base": 2.0, "amplitude": 1.0}},
            "source": {"constant": 1.0},
            "u_range": [0.0, 1.0]
        },
        "discretization": {"m_x": 64, "m_c": 256, "cells_per_period": 16},
        "study": {"eps": [0.125, 0.0625, 0.03125, 0.015625], "subdomain": {"lo": [0.25, 0.25], "hi": [0.75, 0.75]}, "beta": 0.5}
    })
}

fn rosseland() -> serde_json::Value {
    json!({
        "problem": {
            "dim": 1,
            "coefficient": {"family": "ROSSELAND", "k": {"base": 2.0, "amplitude": 1.0}, "b": 0.1},
            "source": {"constant": 1.0},
            "u_range": [0.0, 1.0]
        },
        "discretization": {"m_x": 64, "m_c": 256, "cells_per_period": 16},
        "nonlinear": {"damping": 0.5},
        "study": {"eps": [0.125, 0.0625, 0.03125, 0.015625], "fields": false}
    })
}

fn two_dimensional() -> serde_json::Value {
    json!({
        "problem": {
            "dim": 2,
            "coefficient": {"family": "SMOOTH_PERIODIC", "profile": {"base": 2.0, "amplitude": 1.0, "frequencies": [1, 1]}},
            "source": {"constant": 1.0},
            "u_range": [0.0, 1.0]
        },
        "discretization": {"m_x": 32, "m_c": 64, "cells_per_period": 8},
        "study": {"eps": [0.25, 0.125, 0.0625], "fields": false}
    })
}

struct StudyRun {
    report: ErrorReport,
    elapsed: Duration,
    max_rhs_relative_mean: f64,
    max_corrector_mean: f64,
    picard_converged: bool,
}

fn run_study(doc: serde_json::Value, out: &Path) -> Result<StudyRun, String> {
    let cfg = ExperimentConfig::from_value(doc, &[]).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_command(&Command::Study, &cfg, out, false).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let results = &outcome.report["results"];
    let rows: Vec<ErrorRow> = serde_json::from_value(results["rows"].clone()).map_err(|e| e.to_string())?;
    let diag = &results["cell"]["diagnostics"];
    let converged = rows.iter().all(|r| r.picard_fine <= cfg.nonlinear.max_iter);
    Ok(StudyRun {
        report: ErrorReport::from_rows(rows),
        elapsed,
        max_rhs_relative_mean: diag["max_rhs_relative_mean"].as_f64().unwrap_or(f64::NAN),
        max_corrector_mean: diag["max_corrector_mean"].as_f64().unwrap_or(f64::NAN),
        picard_converged: converged,
    })
}

fn slope(r: &ErrorReport, column: &str) -> f64 {
    r.slope(column).unwrap_or(f64::NAN)
}

fn slope_verdict(run: &Result<StudyRun, String>, columns: &[(&str, f64)], limit: Duration) -> Verdict {
    match run {
        Err(e) => verdict(false, format!("study failed: {e}")),
        Ok(run) => {
            let mut ok = run.elapsed <= limit;
            let mut parts = Vec::new();
            for &(c, min) in columns {
                let s = slope(&run.report, c);
                ok &= s >= min;
                parts.push(format!("{c} slope {s:.3} (need >= {min})"));
            }
            parts.push(format!("runtime {:.1}s (limit {}s)", run.elapsed.as_secs_f64(), limit.as_secs()));
            verdict(ok, parts.join(", "))
        }
    }
}

fn model(dim: usize, family: CoefficientFamily, u_range: [f64; 2]) -> CoefficientModel {
    CoefficientModel::new(dim, family, SourceModel::constant(1.0), u_range).expect("valid model")
}

fn a0_single(model: &CoefficientModel, m_c: usize) -> twoscale_core::Mat2 {
    let grid = CellGrid::new(model.dim(), m_c).unwrap();
    let solver = CellSolver::new(model, grid, CellOptions::default()).unwrap();
    let n = solver.solve_n(0.5, &[0.5, 0.5]).unwrap();
    solver.compute_a0(0.5, &[0.5, 0.5], &n).unwrap().a0
}

fn criterion_8() -> Verdict {
    let smooth = model(
        1,
        CoefficientFamily::SmoothPeriodic {
            profile: Profile::sine(2.0, 1.0),
            matrix: MatrixParam::Scalar(1.0),
        },
        [0.0, 1.0],
    );
    let a = a0_single(&smooth, 512)[0][0];
    let err_1d = (a - 3f64.sqrt()).abs();
    let laminate = model(
        2,
        CoefficientFamily::Layered {
            low: 1.0,
            high: 4.0,
            fraction: 0.5,
            axis: 0,
            width: Some(0.0),
            matrix: MatrixParam::Scalar(1.0),
        },
        [0.0, 1.0],
    );
    let coarse = a0_single(&laminate, 16);
    let fine = a0_single(&laminate, 32);
    let mut err_2d = 0.0f64;
    let target = [[1.6, 0.0], [0.0, 2.5]];
    for i in 0..2 {
        for j in 0..2 {
            let extrapolated = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
            err_2d = err_2d.max((extrapolated - target[i][j]).abs());
        }
    }
    verdict(
        err_1d <= 1e-6 && err_2d <= 1e-3,
        format!("|a0 - sqrt 3| = {err_1d:.3e} (need <= 1e-6), laminate max error {err_2d:.3e} (need <= 1e-3)"),
    )
}

fn shipped_families() -> Vec<(&'static str, CoefficientModel)> {
    vec![
        ("CONSTANT", model(2, CoefficientFamily::Constant { matrix: MatrixParam::Full([[3.0, 1.0], [1.0, 2.0]]) }, [0.0, 1.0])),
        (
            "SMOOTH_PERIODIC 1-D",
            model(1, CoefficientFamily::SmoothPeriodic { profile: Profile::sine(2.0, 1.0), matrix: MatrixParam::Scalar(1.0) }, [0.0, 1.0]),
        ),
        (
            "SMOOTH_PERIODIC 2-D",
            model(
                2,
                CoefficientFamily::SmoothPeriodic {
                    profile: Profile { base: 2.0, amplitude: 1.0, frequencies: [1, 1], x_modulation: 0.5 },
                    matrix: MatrixParam::Full([[1.0, 0.2], [0.2, 1.5]]),
                },
                [0.0, 1.0],
            ),
        ),
        (
            "LAYERED",
            model(
                2,
                CoefficientFamily::Layered { low: 1.0, high: 4.0, fraction: 0.5, axis: 0, width: Some(1.0 / 16.0), matrix: MatrixParam::Scalar(1.0) },
                [0.0, 1.0],
            ),
        ),
        (
            "ROSSELAND",
            model(
                1,
                CoefficientFamily::Rosseland { k: Profile::sine(2.0, 1.0), k_matrix: MatrixParam::Scalar(1.0), b: MatrixParam::Scalar(0.1) },
                [0.0, 1.0],
            ),
        ),
        (
            "SEPARATED",
            model(
                2,
                CoefficientFamily::Separated { mu0: 1.0, mu_u2: 0.5, mu_x: 0.25, g: Profile::sine(2.0, 1.0), matrix: MatrixParam::Scalar(1.0) },
                [0.0, 1.0],
            ),
        ),
    ]
}

/// Bound margin, slack, largest relative rhs mean and largest corrector mean.
type TableStats = Result<(f64, f64, f64, f64), String>;

/// Tables for every shipped family; reused by criteria 9 and 12.
fn family_tables() -> Vec<(&'static str, TableStats)> {
    shipped_families()
        .into_iter()
        .map(|(name, m)| {
            let grid = CellGrid::new(m.dim(), 32).unwrap();
            let res = CellSolver::new(&m, grid, CellOptions::default())
                .and_then(|s| {
                    let params = ParameterGrid::for_model(&m, Some(3), Some(3))?;
                    s.build_tables(&params)
                })
                .map(|(t, a0)| {
                    let d = t.diagnostics();
                    let slack = 1e-10 * m.ellipticity()[1].max(1.0);
                    (a0.bound_margin(), slack, d.max_rhs_relative_mean, d.max_corrector_mean)
                })
                .map_err(|e| e.to_string());
            (name, res)
        })
        .collect()
}

fn criterion_9(tables: &[(&str, TableStats)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in tables {
        match r {
            Ok((margin, slack, _, _)) => {
                ok &= *margin >= -slack;
                parts.push(format!("{name} margin {margin:.2e}"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} failed: {e}"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn criterion_10() -> Verdict {
    let m = model(
        2,
        CoefficientFamily::SmoothPeriodic {
            profile: Profile { base: 2.0, amplitude: 1.0, frequencies: [1, 2], x_modulation: 0.0 },
            matrix: MatrixParam::Full([[1.0, 0.3], [0.3, 1.2]]),
        },
        [0.0, 1.0],
    );
    let grid = CellGrid::new(2, 32).unwrap();
    let opts = CellOptions::default();
    let solver = CellSolver::new(&m, grid, opts).unwrap();
    let cases: [([f64; 2], f64); 5] = [
        ([0.0, 0.0], 1e-12),
        ([1.0, 0.0], 1e-12),
        ([-2.0, 1.0], 1e-12),
        ([0.25, 0.5], 10.0 * opts.solver.cg_tol),
        ([3.0 / 32.0, -5.0 / 32.0], 10.0 * opts.solver.cg_tol),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (z, tol) in cases {
        match solver.check_translation_invariance(0.5, &[0.5, 0.5], &z) {
            Ok(r) => {
                ok &= r.discrepancy <= tol;
                parts.push(format!("z = ({}, {}): {:.1e}", z[0], z[1], r.discrepancy));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("z = ({}, {}) failed: {e}", z[0], z[1]));
            }
        }
    }
    verdict(ok, parts.join(", "))
}

fn criterion_11() -> Verdict {
    let eps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    match antiderivative_lemma_1d(|_, y| (2.0 * std::f64::consts::PI * y).sin(), &eps, f64::INFINITY, 16) {
        Err(e) => verdict(false, e.to_string()),
        Ok(r) => {
            let s = r.fit.as_ref().map_or(f64::NAN, |f| f.slope);
            let worst = r
                .rows
                .iter()
                .map(|(e, n)| (n / (e / (2.0 * std::f64::consts::PI)) - 1.0).abs())
                .fold(0.0, f64::max);
            verdict(
                (s - 1.0).abs() <= 0.05 && worst <= 0.02,
                format!("slope {s:.4}, worst relative deviation from eps/(2 pi) {worst:.2e}"),
            )
        }
    }
}

fn criterion_12(runs: &[&Result<StudyRun, String>], tables: &[(&str, TableStats)]) -> Verdict {
    let mut rhs = 0.0f64;
    let mut mean = 0.0f64;
    let mut ok = true;
    for r in runs {
        match r {
            Ok(r) => {
                rhs = rhs.max(r.max_rhs_relative_mean);
                mean = mean.max(r.max_corrector_mean);
            }
            Err(_) => ok = false,
        }
    }
    for (_, t) in tables {
        match t {
            Ok((_, _, r, m)) => {
                rhs = rhs.max(*r);
                mean = mean.max(*m);
            }
            Err(_) => ok = false,
        }
    }
    ok &= rhs <= 1e-8 && mean <= 1e-12;
    verdict(
        ok,
        format!("max relative rhs mean {rhs:.2e} (need <= 1e-8), max corrector mean {mean:.2e} (need <= 1e-12)"),
    )
}

fn criterion_13(root: &Path) -> Verdict {
    let config = root.join("experiment1.json");
    std::fs::write(&config, serde_json::to_string_pretty(&experiment_one()).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out = root.join(format!("threads_{threads}"));
        let status = Process::new(env!("CARGO_BIN_EXE_twoscale"))
            .args(["study", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .status();
        match status {
            Ok(s) if s.success() => outputs.push(out),
            Ok(s) => return verdict(false, format!("--threads {threads} exited with {s}")),
            Err(e) => return verdict(false, format!("could not launch binary: {e}")),
        }
    }
    let mut same = true;
    let mut compared = Vec::new();
    for name in ["report.csv", "report.json", "MANIFEST.json"] {
        let a = std::fs::read(outputs[0].join(name));
        let b = std::fs::read(outputs[1].join(name));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                same &= a == b;
                compared.push(format!("{name} {}", if a == b { "identical" } else { "differs" }));
            }
            _ => {
                same = false;
                compared.push(format!("{name} missing"));
            }
        }
    }
    verdict(same, compared.join(", "))
}

fn main() {
    let filter: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| filter.as_ref().map_or(true, |f| f.contains(&n));
    let root = tempfile::tempdir().expect("temporary directory");
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();

    let needs_one = (1..=5).chain([12]).any(wanted);
    let one = if needs_one {
        run_study(experiment_one(), &root.path().join("experiment1"))
    } else {
        Err("skipped".into())
    };
    let minute = Duration::from_secs(60);
    if wanted(1) {
        verdicts.push((1, "zero-order sup-norm rate", slope_verdict(&one, &[("linf_order0", 0.9)], minute)));
    }
    if wanted(2) {
        verdicts.push((2, "energy rate", slope_verdict(&one, &[("energy", 0.9)], minute)));
    }
    if wanted(3) {
        verdicts.push((
            3,
            "interior gradient and flux of first-order remainder",
            slope_verdict(&one, &[("grad_interior", 0.9), ("flux_interior", 0.9)], minute),
        ));
    }
    if wanted(4) {
        verdicts.push((4, "first-order H1 rate", slope_verdict(&one, &[("h1_order1", 0.45)], minute)));
    }
    if wanted(5) {
        verdicts.push((5, "Holder seminorm rate", slope_verdict(&one, &[("holder", 0.8)], minute)));
    }
    let ross = if wanted(6) || wanted(12) {
        run_study(rosseland(), &root.path().join("rosseland"))
    } else {
        Err("skipped".into())
    };
    if wanted(6) {
        let mut v = slope_verdict(&ross, &[("linf_order0", 0.8)], Duration::from_secs(300));
        if let Ok(r) = &ross {
            v.passed &= r.picard_converged;
        }
        verdicts.push((6, "Rosseland zero-order rate", v));
    }
    let two = if wanted(7) || wanted(12) {
        run_study(two_dimensional(), &root.path().join("two_d"))
    } else {
        Err("skipped".into())
    };
    if wanted(7) {
        verdicts.push((7, "2-D zero-order rate", slope_verdict(&two, &[("linf_order0", 0.8)], Duration::from_secs(600))));
    }
    if wanted(8) {
        verdicts.push((8, "homogenized tensor oracles", criterion_8()));
    }
    let tables = if wanted(9) || wanted(12) { family_tables() } else { Vec::new() };
    if wanted(9) {
        verdicts.push((9, "Voigt-Reuss bounds", criterion_9(&tables)));
    }
    if wanted(10) {
        verdicts.push((10, "translation invariance", criterion_10()));
    }
    if wanted(11) {
        verdicts.push((11, "antiderivative lemma", criterion_11()));
    }
    if wanted(12) {
        verdicts.push((12, "compatibility and mean-zero", criterion_12(&[&one, &ross, &two], &tables)));
    }
    if wanted(13) {
        verdicts.push((13, "determinism across thread counts", criterion_13(root.path())));
    }

    let mut failed = 0;
    for (n, name, v) in &verdicts {
        println!("criterion {n:>2} {}: {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
