//! Two-scale reconstruction `u0 + eps u1 + eps^2 u2` on a fine grid, the
//! fine-scale reference solver and the remainder `Z = u_eps - u~`.
//!
//! A fine grid for `eps = 1/k` with `P` cells per period is a [`MacroGrid`]
//! with `k P` cells per side. Fast coordinates are then computed exactly
//! from lattice indices: `y = (i mod P) / P` at nodes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CorrectorSet;
use crate::coefficients::Coefficient;
use crate::fem::{assemble_load, assemble_stiffness, solve_dirichlet, QuadPoint, QuadratureRule, SolverOptions, SparseSystem};
use crate::grid::{fd_gradient, fd_hessian, hermite_interpolate, Grid, MacroField, MacroGrid};
use crate::macro_solver::{check_range, picard, zero_boundary, InitialGuess, PicardOptions, PicardReport};
use crate::tensor::{Mat2, Point, Vec2};
use crate::{Error, Result};

/// Number of periods `k` for `eps = 1/k`.
pub fn periods(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("eps = {eps} not in (0, 1)")));
    }
    let k = (1.0 / eps).round();
    if ((1.0 / eps) - k).abs() > 1e-9 * k {
        return Err(Error::Config(format!("eps = {eps} is not the reciprocal of an integer")));
    }
    Ok(k as usize)
}

/// Fine grid with `cells_per_period` cells per period of `eps`.
pub fn fine_grid_for(dim: usize, eps: f64, cells_per_period: usize) -> Result<MacroGrid> {
    if cells_per_period < 8 {
        return Err(Error::Config(format!(
            "{cells_per_period} cells per period do not resolve the oscillation; use at least 8"
        )));
    }
    MacroGrid::new(dim, periods(eps)? * cells_per_period)
}

/// Cells per period of `grid` for `eps`, checking that periods tile it.
pub fn cells_per_period(grid: &MacroGrid, eps: f64) -> Result<usize> {
    let k = periods(eps)?;
    let m = grid.cells_per_side();
    if !m.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "fine grid with {m} cells per side does not hold a whole number of cells per period of eps = 1/{k}"
        )));
    }
    Ok(m / k)
}

/// Fast coordinate of a quadrature point of the fine grid.
pub fn fast_coordinate(qp: &QuadPoint, p: usize, dim: usize) -> Point {
    let mut y = [0.0; 2];
    for d in 0..dim {
        y[d] = ((qp.cell[d] % p) as f64 + qp.local[d]) / p as f64;
    }
    y
}

/// Fast coordinate of fine node `node`.
pub fn fast_node_coordinate(grid: &MacroGrid, node: usize, p: usize) -> Point {
    let idx = grid.node_index(node);
    let mut y = [0.0; 2];
    for d in 0..grid.dim() {
        y[d] = (idx[d] % p) as f64 / p as f64;
    }
    y
}

/// Nodal layers of the reconstruction on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionField {
    pub eps: f64,
    pub grid: MacroGrid,
    /// `u0` at fine nodes.
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl ExpansionField {
    /// `u0 + eps u1 + eps^2 u2` truncated after the given order.
    pub fn truncated(&self, order: usize) -> Result<Vec<f64>> {
        if order > 2 {
            return Err(Error::Config(format!("truncation order {order} not in {{0, 1, 2}}")));
        }
        let e = self.eps;
        Ok((0..self.u0.len())
            .map(|i| match order {
                0 => self.u0[i],
                1 => self.u0[i] + e * self.u1[i],
                _ => self.u0[i] + e * self.u1[i] + e * e * self.u2[i],
            })
            .collect())
    }
}

/// Macro-scale data of `u0` needed at fine nodes.
pub struct MacroData {
    field: MacroField,
    grad: Vec<Vec2>,
    hess: Vec<Mat2>,
}

impl MacroData {
    pub fn new(u0: &MacroField) -> Result<Self> {
        Ok(Self {
            field: u0.clone(),
            grad: fd_gradient(u0)?,
            hess: fd_hessian(u0)?,
        })
    }

    /// `u0` by piecewise cubic Hermite interpolation, and the multilinear
    /// interpolants of the nodal gradient and Hessian.
    pub fn at(&self, x: &Point) -> Result<(f64, Vec2, Mat2)> {
        let grid = *self.field.grid();
        let u = hermite_interpolate(&self.field, &self.grad, &self.hess, x)?;
        let (e, local) = grid.locate(x)?;
        let dofs = grid.element_dofs(e);
        let w = crate::grid::shape_values(grid.dim(), &local);
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for k in 0..grid.nodes_per_element() {
            let n = dofs[k];
            for a in 0..2 {
                g[a] += w[k] * self.grad[n][a];
                for b in 0..2 {
                    h[a][b] += w[k] * self.hess[n][a][b];
                }
            }
        }
        Ok((u, g, h))
    }
}

/// Builds `u0`, `u1 = N_l d_l u0` and
/// `u2 = M_kl d_kl u0 + Q_k d_k u0 + R` at every fine node.
pub fn reconstruct(u0: &MacroField, tables: &CorrectorSet, eps: f64, fine: &MacroGrid) -> Result<ExpansionField> {
    let dim = fine.dim();
    if u0.grid().dim() != dim || tables.grid().dim() != dim {
        return Err(Error::Config("dimension mismatch in reconstruction".into()));
    }
    let p = cells_per_period(fine, eps)?;
    let macro_data = MacroData::new(u0)?;
    let rows: Vec<(f64, f64, f64)> = (0..fine.node_count())
        .into_par_iter()
        .map(|n| {
            let x = fine.node_coords(n);
            let y = fast_node_coordinate(fine, n, p);
            let (u, g, h) = macro_data.at(&x)?;
            let c = tables.eval(u, &x, &y);
            let q = c.q(&g);
            let mut u1 = 0.0;
            let mut u2 = c.r;
            for k in 0..dim {
                u1 += c.n[k] * g[k];
                u2 += q[k] * g[k];
                for l in 0..dim {
                    u2 += c.m[k][l] * h[k][l];
                }
            }
            Ok((u, u1, u2))
        })
        .collect::<Result<_>>()?;
    let mut out = ExpansionField {
        eps,
        grid: *fine,
        u0: Vec::with_capacity(rows.len()),
        u1: Vec::with_capacity(rows.len()),
        u2: Vec::with_capacity(rows.len()),
    };
    for (a, b, c) in rows {
        out.u0.push(a);
        out.u1.push(b);
        out.u2.push(c);
    }
    Ok(out)
}

/// Settings for the fine-scale solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineOptions {
    pub picard: PicardOptions,
    pub solver: SolverOptions,
    pub quadrature: Option<usize>,
    /// Refuse grids with more unknowns than this.
    pub dof_cap: usize,
}

impl Default for FineOptions {
    fn default() -> Self {
        Self {
            picard: PicardOptions::default(),
            solver: SolverOptions::default(),
            quadrature: None,
            dof_cap: 4_000_000,
        }
    }
}

/// Quadrature used on fine grids for `model`.
pub fn fine_quadrature(model: &dyn Coefficient, dim: usize, points: Option<usize>) -> Result<QuadratureRule> {
    QuadratureRule::gauss(dim, points.unwrap_or(if model.is_cubic_in_u() { 3 } else { 2 }))
}

/// Solves `-div(a(u, x, x/eps) grad u) = f(u, x, x/eps)` with zero
/// Dirichlet data by Picard iteration on the fine grid.
pub fn solve_fine(
    model: &dyn Coefficient,
    eps: f64,
    fine: &MacroGrid,
    opts: &FineOptions,
) -> Result<(MacroField, PicardReport)> {
    if model.dim() != fine.dim() {
        return Err(Error::Config("model and fine grid dimensions differ".into()));
    }
    let dofs = fine.node_count();
    if dofs > opts.dof_cap {
        return Err(Error::DofCap {
            dofs,
            cap: opts.dof_cap,
        });
    }
    let p = cells_per_period(fine, eps)?;
    if p < 8 {
        return Err(Error::Config(format!("{p} cells per period; at least 8 are needed")));
    }
    opts.picard.validate()?;
    let dim = fine.dim();
    let quad = fine_quadrature(model, dim, opts.quadrature)?;
    let bc = zero_boundary(fine);
    let mut linear = |prev: &[f64]| -> Result<(Vec<f64>, usize)> {
        let field = MacroField::new(*fine, prev.to_vec())?;
        let u_at = |qp: &QuadPoint| model.clamp_u(field.eval_local(qp.element, &qp.local));
        let matrix = assemble_stiffness(fine, |qp| model.a(u_at(qp), &qp.x, &fast_coordinate(qp, p, dim)), &quad)?;
        let rhs = assemble_load(fine, |qp| model.f(u_at(qp), &qp.x, &fast_coordinate(qp, p, dim)), &quad)?;
        let sol = solve_dirichlet(&SparseSystem { matrix, rhs }, &bc, Some(prev), &opts.solver)?;
        Ok((sol.values, sol.iterations))
    };
    let mut extra = 0;
    let initial = match &opts.picard.initial {
        InitialGuess::Midpoint => {
            let [lo, hi] = model.u_range();
            let (v, cg) = linear(&vec![0.5 * (lo + hi); dofs])?;
            extra = cg;
            v
        }
        InitialGuess::Constant(c) => {
            let mut v = vec![*c; dofs];
            bc.keys().for_each(|&b| v[b] = 0.0);
            v
        }
        InitialGuess::Field(v) => {
            if v.len() != dofs {
                return Err(Error::Config(format!("initial guess has {} values for {dofs} nodes", v.len())));
            }
            v.clone()
        }
    };
    let (values, mut report) = picard(initial, &opts.picard, &mut linear)?;
    report.cg_iterations += extra;
    report.out_of_range = check_range(fine, &values, model.u_range());
    Ok((MacroField::new(*fine, values)?, report))
}

/// `Z = u_eps - u~` on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderField {
    pub order: usize,
    pub z: MacroField,
    /// Largest `|Z|` over boundary nodes.
    pub boundary_max: f64,
}

pub fn remainder(u_eps: &MacroField, expansion: &ExpansionField, order: usize) -> Result<RemainderField> {
    if *u_eps.grid() != expansion.grid {
        return Err(Error::Config("remainder of fields on different grids".into()));
    }
    let tilde = expansion.truncated(order)?;
    let grid = expansion.grid;
    let z: Vec<f64> = u_eps.values().iter().zip(&tilde).map(|(a, b)| a - b).collect();
    let boundary_max = grid
        .boundary_nodes()
        .into_iter()
        .map(|n| z[n].abs())
        .fold(0.0, f64::max);
    Ok(RemainderField {
        order,
        z: MacroField::new(grid, z)?,
        boundary_max,
    })
}
