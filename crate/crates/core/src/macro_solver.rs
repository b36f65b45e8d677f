//! Damped Picard iteration for quasilinear Dirichlet problems on a
//! [`MacroGrid`], used for the homogenized problem
//! `-div(a0(u0, x) grad u0) = <f>(u0, x)` and, through [`picard`], for the
//! fine-scale problem.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::HomogenizedTensor;
use crate::coefficients::Coefficient;
use crate::fem::{
    assemble_load, assemble_stiffness, element_points, solve_dirichlet, QuadPoint, QuadratureRule,
    SolverOptions, SparseSystem,
};
use crate::grid::{CellGrid, Grid, MacroField, MacroGrid};
use crate::tensor::{Mat2, Point};
use crate::{Error, Result};

/// Starting point of a Picard iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Linear solve with the coefficient frozen at the middle of the `u` range.
    Midpoint,
    Constant(f64),
    /// Nodal values on the solver's grid.
    Field(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    /// Stop when the max-norm increment is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation `theta` in `(0, 1]`.
    pub damping: f64,
    pub initial: InitialGuess,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            damping: 1.0,
            initial: InitialGuess::Midpoint,
        }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("Picard tolerance {} must be positive", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("Picard needs at least one iteration".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} not in (0, 1]", self.damping)));
        }
        Ok(())
    }
}

/// Convergence record of a Picard run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// Max-norm increments, one per iteration.
    pub increments: Vec<f64>,
    pub cg_iterations: usize,
    /// Whether an increment grew after the first iteration.
    pub non_monotone: bool,
    /// Whether some interior value left the open admissible range.
    pub out_of_range: bool,
}

impl PicardReport {
    pub fn final_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(0.0)
    }
}

/// Linear solve of one Picard step: coefficients frozen at `prev`, returns
/// the new nodal values and the CG iteration count.
pub type LinearStep<'a> = dyn FnMut(&[f64]) -> Result<(Vec<f64>, usize)> + 'a;

/// Generic damped Picard loop over nodal vectors.
pub fn picard(initial: Vec<f64>, opts: &PicardOptions, step: &mut LinearStep<'_>) -> Result<(Vec<f64>, PicardReport)> {
    opts.validate()?;
    let mut report = PicardReport::default();
    let mut u = initial;
    for k in 1..=opts.max_iter {
        let (next, cg) = step(&u)?;
        report.cg_iterations += cg;
        let mut inc = 0.0f64;
        for (a, b) in u.iter_mut().zip(&next) {
            let v = (1.0 - opts.damping) * *a + opts.damping * b;
            inc = inc.max((v - *a).abs());
            *a = v;
        }
        if !inc.is_finite() {
            return Err(Error::NonFinite("Picard iterate"));
        }
        if k > 2 && inc > report.increments[k - 2] && !report.non_monotone {
            report.non_monotone = true;
            log::warn!(
                "Picard increment grew from {:e} to {inc:e} at iteration {k}",
                report.increments[k - 2]
            );
        }
        report.increments.push(inc);
        report.iterations = k;
        if inc <= opts.tol {
            return Ok((u, report));
        }
    }
    Err(Error::PicardNonConvergence {
        iterations: opts.max_iter,
        last: report.final_increment(),
        increments: report.increments,
    })
}

/// Logs a warning and returns true when an interior value leaves `(lo, hi)`.
pub fn check_range(grid: &MacroGrid, values: &[f64], range: [f64; 2]) -> bool {
    let bad = (0..grid.node_count())
        .filter(|&n| !grid.is_boundary(n))
        .find(|&n| !(values[n] > range[0] && values[n] < range[1]));
    if let Some(n) = bad {
        log::warn!(
            "solution value {} at x = {:?} is not inside the admissible range ({}, {})",
            values[n],
            grid.node_coords(n),
            range[0],
            range[1]
        );
        true
    } else {
        false
    }
}

/// Homogeneous Dirichlet data on every boundary node.
pub fn zero_boundary(grid: &MacroGrid) -> BTreeMap<usize, f64> {
    grid.boundary_nodes().into_iter().map(|n| (n, 0.0)).collect()
}

/// Discretization settings for the homogenized problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroOptions {
    pub picard: PicardOptions,
    pub solver: SolverOptions,
    /// Gauss points per axis; `None` picks 2, or 3 for cubic-in-u models.
    pub quadrature: Option<usize>,
}

impl Default for MacroOptions {
    fn default() -> Self {
        Self {
            picard: PicardOptions::default(),
            solver: SolverOptions::default(),
            quadrature: None,
        }
    }
}

/// `int_Y f(u, x, y) dy`, by quadrature on the cell grid.
pub fn homogenized_source(model: &dyn Coefficient, u: f64, x: &Point, cell: &CellGrid) -> Result<f64> {
    let quad = QuadratureRule::gauss(cell.dim(), 3)?;
    let u = model.clamp_u(u);
    let mut sum = 0.0;
    for e in 0..cell.element_count() {
        for qp in element_points(cell, &quad, e) {
            sum += qp.weight * model.f(u, x, &qp.x);
        }
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite("homogenized source"));
    }
    Ok(sum)
}

/// Cell mean of the source, from a closed form when the model has one.
fn source_mean(model: &dyn Coefficient, u: f64, x: &Point, cell: &CellGrid) -> Result<f64> {
    match model.source_mean(model.clamp_u(u), x) {
        Some(v) => Ok(v),
        None => homogenized_source(model, u, x, cell),
    }
}

fn macro_quadrature(model: &dyn Coefficient, grid: &MacroGrid, q: Option<usize>) -> Result<QuadratureRule> {
    QuadratureRule::gauss(grid.dim(), q.unwrap_or(if model.is_cubic_in_u() { 3 } else { 2 }))
}

/// Frozen-coefficient system of the homogenized problem at `prev`.
fn homogenized_system(
    tensor: &HomogenizedTensor,
    model: &dyn Coefficient,
    grid: &MacroGrid,
    cell: &CellGrid,
    quad: &QuadratureRule,
    prev: &MacroField,
) -> Result<SparseSystem> {
    let u_at = |qp: &QuadPoint| prev.eval_local(qp.element, &qp.local);
    let matrix = assemble_stiffness(grid, |qp| tensor.lookup(u_at(qp), &qp.x), quad)?;
    let rhs = assemble_load(
        grid,
        |qp| source_mean(model, u_at(qp), &qp.x, cell).unwrap_or(f64::NAN),
        quad,
    )?;
    Ok(SparseSystem { matrix, rhs })
}

/// Solves the homogenized problem with homogeneous Dirichlet data.
pub fn solve_homogenized(
    tensor: &HomogenizedTensor,
    model: &dyn Coefficient,
    grid: &MacroGrid,
    cell: &CellGrid,
    opts: &MacroOptions,
) -> Result<(MacroField, PicardReport)> {
    if tensor.dim() != grid.dim() || model.dim() != grid.dim() {
        return Err(Error::Config("dimension mismatch between tensor, model and macro grid".into()));
    }
    opts.picard.validate()?;
    let quad = macro_quadrature(model, grid, opts.quadrature)?;
    let bc = zero_boundary(grid);
    let n = grid.node_count();
    let mut linear = |prev: &[f64]| -> Result<(Vec<f64>, usize)> {
        let field = MacroField::new(*grid, prev.to_vec())?;
        let system = homogenized_system(tensor, model, grid, cell, &quad, &field)?;
        let sol = solve_dirichlet(&system, &bc, Some(prev), &opts.solver)?;
        Ok((sol.values, sol.iterations))
    };
    let mut extra_cg = 0;
    let initial = match &opts.picard.initial {
        InitialGuess::Midpoint => {
            let [lo, hi] = model.u_range();
            let (v, cg) = linear(&vec![0.5 * (lo + hi); n])?;
            extra_cg = cg;
            v
        }
        InitialGuess::Constant(c) => {
            let mut v = vec![*c; n];
            bc.keys().for_each(|&b| v[b] = 0.0);
            v
        }
        InitialGuess::Field(v) => {
            if v.len() != n {
                return Err(Error::Config(format!("initial guess has {} values for {n} nodes", v.len())));
            }
            v.clone()
        }
    };
    let (values, mut report) = picard(initial, &opts.picard, &mut linear)?;
    report.cg_iterations += extra_cg;
    report.out_of_range = check_range(grid, &values, model.u_range());
    Ok((MacroField::new(*grid, values)?, report))
}

/// Euclidean norm over free nodes of the discrete weak residual
/// `K(u) u - F` of the homogenized problem at `candidate`, with the load
/// built from the nodal source field.
pub fn manufactured_residual(
    tensor: &HomogenizedTensor,
    candidate: &MacroField,
    source: &MacroField,
    grid: &MacroGrid,
) -> Result<f64> {
    let quad = QuadratureRule::gauss(grid.dim(), 2)?;
    let matrix = assemble_stiffness(
        grid,
        |qp| tensor.lookup(candidate.eval_local(qp.element, &qp.local), &qp.x),
        &quad,
    )?;
    let rhs = assemble_load(grid, |qp| source.eval_local(qp.element, &qp.local), &quad)?;
    let mut ku = vec![0.0; grid.node_count()];
    matrix.mul_vec(candidate.values(), &mut ku);
    let sum: f64 = (0..grid.node_count())
        .filter(|&n| !grid.is_boundary(n))
        .map(|n| (ku[n] - rhs[n]).powi(2))
        .sum();
    Ok(sum.sqrt())
}

/// `a0 grad u0 . grad u0` integrated over the macro grid.
pub fn homogenized_energy(tensor: &HomogenizedTensor, u0: &MacroField, quad: &QuadratureRule) -> f64 {
    let grid = *u0.grid();
    let mut total = 0.0;
    for e in 0..grid.element_count() {
        for qp in element_points(&grid, quad, e) {
            let g = u0.grad_local(e, &qp.local);
            let a: Mat2 = tensor.lookup(u0.eval_local(e, &qp.local), &qp.x);
            total += qp.weight * crate::tensor::quad_form(&a, &g);
        }
    }
    total
}
