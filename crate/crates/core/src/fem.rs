//! Q1 finite elements on the structured grids: Gauss quadrature, assembly of
//! variable-coefficient stiffness matrices and load vectors, and a Jacobi
//! preconditioned conjugate-gradient solver.
//!
//! Element contributions are computed in parallel but always added to the
//! global arrays in element order, so assembled systems are bitwise
//! reproducible for any number of worker threads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{shape_gradients, shape_values, Grid};
use crate::tensor::{Mat2, Point, Vec2};
use crate::{Error, Result};

/// Tensor-product Gauss-Legendre rule on the reference element `[0,1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points_per_axis: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

fn gauss_legendre_01(n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[
                -0.861_136_311_594_052_6,
                -0.339_981_043_584_856_3,
                0.339_981_043_584_856_3,
                0.861_136_311_594_052_6,
            ],
            &[
                0.347_854_845_137_453_9,
                0.652_145_154_862_546_1,
                0.652_145_154_862_546_1,
                0.347_854_845_137_453_9,
            ],
        ),
        5 => (
            &[
                -0.906_179_845_938_664,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664,
            ],
            &[
                0.236_926_885_056_189_1,
                0.478_628_670_499_366_5,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_5,
                0.236_926_885_056_189_1,
            ],
        ),
        _ => return None,
    };
    Some((
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    ))
}

impl QuadratureRule {
    /// Gauss rule with `points_per_axis` points along every axis (1 to 5),
    /// exact for polynomials of degree `2 points_per_axis - 1` per axis.
    pub fn gauss(dim: usize, points_per_axis: usize) -> Result<Self> {
        let (x, w) = gauss_legendre_01(points_per_axis).ok_or_else(|| {
            Error::Config(format!(
                "quadrature with {points_per_axis} points per axis is not available (1 to 5)"
            ))
        })?;
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for (xi, wi) in x.iter().zip(&w) {
                points.push([*xi, 0.0]);
                weights.push(*wi);
            }
        } else {
            for (yj, wj) in x.iter().zip(&w) {
                for (xi, wi) in x.iter().zip(&w) {
                    points.push([*xi, *yj]);
                    weights.push(wi * wj);
                }
            }
        }
        Ok(Self {
            dim,
            points_per_axis,
            points,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Everything an integrand may need at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub element: usize,
    /// Lattice index of the element along each axis.
    pub cell: [usize; 2],
    /// Index of the point within the quadrature rule.
    pub index: usize,
    /// Reference coordinates in `[0,1]^n`.
    pub local: Point,
    /// Physical coordinates.
    pub x: Point,
    /// Quadrature weight including the element measure.
    pub weight: f64,
}

/// Iterates the quadrature points of element `e`.
pub fn element_points<'a, G: Grid>(
    grid: &'a G,
    quad: &'a QuadratureRule,
    e: usize,
) -> impl Iterator<Item = QuadPoint> + 'a {
    let h = grid.spacing();
    let origin = grid.element_origin(e);
    let cell = grid.element_index(e);
    let measure = h.powi(grid.dim() as i32);
    quad.points()
        .iter()
        .zip(quad.weights())
        .enumerate()
        .map(move |(index, (p, w))| QuadPoint {
            element: e,
            cell,
            index,
            local: *p,
            x: [origin[0] + p[0] * h, origin[1] + p[1] * h],
            weight: w * measure,
        })
}

/// Symmetric sparse matrix in compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Empty matrix with the coupling pattern of the grid's elements.
    pub fn pattern_of<G: Grid>(grid: &G) -> Self {
        let n = grid.dof_count();
        let npe = grid.nodes_per_element();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..grid.element_count() {
            let dofs = grid.element_dofs(e);
            for &p in &dofs[..npe] {
                rows[p].extend_from_slice(&dofs[..npe]);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Dense input, mainly for small hand-built systems.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry outside the sparsity pattern");
        self.values[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Matrix and right-hand side of one linear problem.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

fn scatter<G: Grid, const N: usize>(grid: &G, per_element: &[[f64; N]], out: &mut [f64]) {
    let npe = grid.nodes_per_element();
    for (e, contrib) in per_element.iter().enumerate() {
        let dofs = grid.element_dofs(e);
        for k in 0..npe {
            out[dofs[k]] += contrib[k];
        }
    }
}

/// Stiffness matrix `K_pq = sum_e int_e A grad(phi_q) . grad(phi_p)`.
///
/// On a [`crate::CellGrid`] the element degrees of freedom pass through the
/// periodic map, which yields the periodic stiffness matrix.
pub fn assemble_stiffness<G, F>(grid: &G, coeff: F, quad: &QuadratureRule) -> Result<CsrMatrix>
where
    G: Grid,
    F: Fn(&QuadPoint) -> Mat2 + Sync,
{
    let npe = grid.nodes_per_element();
    let dim = grid.dim();
    let inv_h = 1.0 / grid.spacing();
    let grads: Vec<[Vec2; 4]> = quad.points().iter().map(|p| shape_gradients(dim, p)).collect();
    let elements: Vec<[[f64; 4]; 4]> = (0..grid.element_count())
        .into_par_iter()
        .map(|e| {
            let mut ke = [[0.0; 4]; 4];
            for qp in element_points(grid, quad, e) {
                let a = coeff(&qp);
                if !crate::tensor::is_finite(&a) {
                    return Err(Error::Assembly {
                        element: e,
                        what: "coefficient",
                    });
                }
                let g = &grads[qp.index];
                for p in 0..npe {
                    let gp = [g[p][0] * inv_h, g[p][1] * inv_h];
                    for q in 0..npe {
                        let gq = [g[q][0] * inv_h, g[q][1] * inv_h];
                        let agq = crate::tensor::mat_vec(&a, &gq);
                        ke[p][q] += qp.weight * crate::tensor::dot(&agq, &gp);
                    }
                }
            }
            Ok(ke)
        })
        .collect::<Result<_>>()?;

    let mut k = CsrMatrix::pattern_of(grid);
    for (e, ke) in elements.iter().enumerate() {
        let dofs = grid.element_dofs(e);
        for p in 0..npe {
            for q in 0..npe {
                k.add(dofs[p], dofs[q], ke[p][q]);
            }
        }
    }
    debug_assert!(k.asymmetry() < 1e-12, "assembled stiffness is not symmetric");
    Ok(k)
}

/// Scalar-source load `b_p = int s phi_p`.
pub fn assemble_load<G, F>(grid: &G, source: F, quad: &QuadratureRule) -> Result<Vec<f64>>
where
    G: Grid,
    F: Fn(&QuadPoint) -> f64 + Sync,
{
    let npe = grid.nodes_per_element();
    let dim = grid.dim();
    let vals: Vec<[f64; 4]> = quad.points().iter().map(|p| shape_values(dim, p)).collect();
    let elements: Vec<[f64; 4]> = (0..grid.element_count())
        .into_par_iter()
        .map(|e| {
            let mut be = [0.0; 4];
            for qp in element_points(grid, quad, e) {
                let s = source(&qp);
                if !s.is_finite() {
                    return Err(Error::Assembly {
                        element: e,
                        what: "source",
                    });
                }
                for (p, b) in be.iter_mut().enumerate().take(npe) {
                    *b += qp.weight * s * vals[qp.index][p];
                }
            }
            Ok(be)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; grid.dof_count()];
    scatter(grid, &elements, &mut out);
    Ok(out)
}

/// Flux-form load `b_p = int B . grad(phi_p)`.
pub fn assemble_flux_load<G, F>(grid: &G, flux: F, quad: &QuadratureRule) -> Result<Vec<f64>>
where
    G: Grid,
    F: Fn(&QuadPoint) -> Vec2 + Sync,
{
    let npe = grid.nodes_per_element();
    let dim = grid.dim();
    let inv_h = 1.0 / grid.spacing();
    let grads: Vec<[Vec2; 4]> = quad.points().iter().map(|p| shape_gradients(dim, p)).collect();
    let elements: Vec<[f64; 4]> = (0..grid.element_count())
        .into_par_iter()
        .map(|e| {
            let mut be = [0.0; 4];
            for qp in element_points(grid, quad, e) {
                let b = flux(&qp);
                if !(b[0].is_finite() && b[1].is_finite()) {
                    return Err(Error::Assembly {
                        element: e,
                        what: "flux",
                    });
                }
                let g = &grads[qp.index];
                for (p, out) in be.iter_mut().enumerate().take(npe) {
                    *out += qp.weight * (b[0] * g[p][0] + b[1] * g[p][1]) * inv_h;
                }
            }
            Ok(be)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; grid.dof_count()];
    scatter(grid, &elements, &mut out);
    Ok(out)
}

/// Linear solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop when `||r||_2 <= cg_tol ||b||_2`.
    pub cg_tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
    /// Relative tolerance on the mean of a periodic right-hand side.
    pub compat_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            max_iter_factor: 10,
            compat_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Jacobi-preconditioned CG on the free entries of `x`. Fixed entries keep
/// their initial value. With `zero_mean` the preconditioned residual is
/// projected onto mean-zero vectors, which keeps iterates in the complement
/// of the constant kernel of a periodic stiffness matrix.
fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    fixed: &[bool],
    zero_mean: bool,
    opts: &SolverOptions,
) -> Result<(usize, f64)> {
    let n = a.dim();
    let diag = a.diagonal();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = if fixed[i] { 0.0 } else { b[i] - r[i] };
    }
    // reduced right-hand side norm: b minus the coupling to fixed values
    let mut b_red = vec![0.0; n];
    let x_fixed: Vec<f64> = (0..n).map(|i| if fixed[i] { x[i] } else { 0.0 }).collect();
    a.mul_vec(&x_fixed, &mut b_red);
    for i in 0..n {
        b_red[i] = if fixed[i] { 0.0 } else { b[i] - b_red[i] };
    }
    let b_norm = dot(&b_red, &b_red).sqrt();
    if b_norm == 0.0 {
        for i in 0..n {
            if !fixed[i] {
                x[i] = 0.0;
            }
        }
        return Ok((0, 0.0));
    }
    let tol = opts.cg_tol * b_norm;
    let precondition = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = if fixed[i] || diag[i] == 0.0 { 0.0 } else { r[i] / diag[i] };
        }
        if zero_mean {
            remove_mean(z);
        }
    };
    let mut r_norm = dot(&r, &r).sqrt();
    if r_norm <= tol {
        return Ok((0, r_norm / b_norm));
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = opts.max_iter_factor * n.max(1);
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        for i in 0..n {
            if fixed[i] {
                ap[i] = 0.0;
            }
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: r_norm / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = dot(&r, &r).sqrt();
        if r_norm <= tol {
            return Ok((it, r_norm / b_norm));
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: r_norm / b_norm,
    })
}

/// Solves with the listed nodes fixed to the given values.
///
/// `initial` seeds the free entries; the iteration starts from zero otherwise.
pub fn solve_dirichlet(
    system: &SparseSystem,
    boundary_values: &BTreeMap<usize, f64>,
    initial: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<Solution> {
    let n = system.matrix.dim();
    let mut fixed = vec![false; n];
    let mut x = match initial {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    for (&node, &value) in boundary_values {
        fixed[node] = true;
        x[node] = value;
    }
    let (iterations, residual) = pcg(&system.matrix, &system.rhs, &mut x, &fixed, false, opts)?;
    Ok(Solution {
        values: x,
        iterations,
        residual,
    })
}

/// Unique mean-zero solution of a singular periodic system.
///
/// The right-hand side must annihilate constants up to `compat_tol` relative
/// to its l1 norm; the residual mean left by quadrature is projected out.
/// A right-hand side at roundoff level relative to the matrix trace is zero.
pub fn solve_periodic_zero_mean(system: &SparseSystem, opts: &SolverOptions) -> Result<Solution> {
    let n = system.matrix.dim();
    let Some(defect) = compatibility_defect(system) else {
        return Ok(Solution {
            values: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    };
    if defect > opts.compat_tol {
        return Err(Error::Incompatible {
            mean: system.rhs.iter().sum(),
            norm: system.rhs.iter().map(|v| v.abs()).sum(),
            tolerance: opts.compat_tol,
        });
    }
    let mut b = system.rhs.clone();
    remove_mean(&mut b);
    let mut x = vec![0.0; n];
    let fixed = vec![false; n];
    let (iterations, residual) = pcg(&system.matrix, &b, &mut x, &fixed, true, opts)?;
    remove_mean(&mut x);
    Ok(Solution {
        values: x,
        iterations,
        residual,
    })
}

const ROUNDOFF_RHS: f64 = 1e-13;

/// Relative mean of a periodic right-hand side, or `None` when the
/// right-hand side is roundoff relative to the matrix trace and counts as zero.
pub fn compatibility_defect(system: &SparseSystem) -> Option<f64> {
    let l1: f64 = system.rhs.iter().map(|v| v.abs()).sum();
    let trace: f64 = system.matrix.diagonal().iter().map(|v| v.abs()).sum();
    if l1 <= ROUNDOFF_RHS * trace {
        None
    } else {
        Some(relative_mean(&system.rhs))
    }
}

/// `|sum b| / sum |b|`, zero for a zero vector.
pub fn relative_mean(rhs: &[f64]) -> f64 {
    let l1: f64 = rhs.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        0.0
    } else {
        rhs.iter().sum::<f64>().abs() / l1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellGrid, MacroGrid};
    use crate::tensor::identity;
    use std::f64::consts::PI;

    fn dense(k: &CsrMatrix) -> Vec<Vec<f64>> {
        (0..k.dim()).map(|i| (0..k.dim()).map(|j| k.get(i, j)).collect()).collect()
    }

    #[test]
    fn quadrature_weights_and_exactness() {
        for n in 1..=5 {
            let q = QuadratureRule::gauss(2, n).unwrap();
            assert!(q.weights().iter().all(|&w| w > 0.0));
            assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let deg = 2 * n - 1;
            let integral: f64 = q
                .points()
                .iter()
                .zip(q.weights())
                .map(|(p, w)| w * p[0].powi(deg as i32) * p[1].powi(deg as i32))
                .sum();
            let exact = 1.0 / ((deg + 1) * (deg + 1)) as f64;
            assert!((integral - exact).abs() < 1e-14, "n = {n}");
        }
        assert!(QuadratureRule::gauss(1, 6).is_err());
    }

    #[test]
    fn one_element_matrix_1d() {
        let g = MacroGrid::new(1, 1).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let k = assemble_stiffness(&g, |_| [[3.0, 0.0], [0.0, 0.0]], &q).unwrap();
        assert_eq!(dense(&k), vec![vec![3.0, -3.0], vec![-3.0, 3.0]]);
    }

    #[test]
    fn unit_square_laplacian_element() {
        // closed-form Q1 Laplacian element matrix on the unit square
        let g = MacroGrid::new(2, 1).unwrap();
        let q = QuadratureRule::gauss(2, 2).unwrap();
        let k = assemble_stiffness(&g, |_| identity(2), &q).unwrap();
        for i in 0..4 {
            assert!((k.get(i, i) - 2.0 / 3.0).abs() < 1e-15);
        }
        // local nodes 0/3 and 1/2 are opposite corners
        assert!((k.get(0, 3) + 1.0 / 3.0).abs() < 1e-15);
        assert!((k.get(1, 2) + 1.0 / 3.0).abs() < 1e-15);
        assert!((k.get(0, 1) + 1.0 / 6.0).abs() < 1e-15);
        assert!((k.get(0, 2) + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_wraparound_assembly() {
        let g = CellGrid::new(1, 2).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let k = assemble_stiffness(&g, |_| identity(1), &q).unwrap();
        assert_eq!(dense(&k), vec![vec![4.0, -4.0], vec![-4.0, 4.0]]);
    }

    #[test]
    fn periodic_kernel_is_constants() {
        let g = CellGrid::new(2, 8).unwrap();
        let q = QuadratureRule::gauss(2, 2).unwrap();
        let k = assemble_stiffness(
            &g,
            |qp| crate::tensor::scaled_identity(2, 2.0 + (2.0 * PI * qp.x[0]).sin()),
            &q,
        )
        .unwrap();
        let scale = k.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-12 * scale));
        assert!(k.asymmetry() < 1e-15);
    }

    #[test]
    fn non_finite_coefficient_names_element() {
        let g = MacroGrid::new(1, 4).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let err = assemble_stiffness(
            &g,
            |qp| if qp.element == 2 { [[f64::NAN; 2]; 2] } else { identity(1) },
            &q,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Assembly { element: 2, .. }));
    }

    #[test]
    fn load_vectors() {
        let g = MacroGrid::new(1, 8).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        assert!(assemble_load(&g, |_| 0.0, &q).unwrap().iter().all(|&v| v == 0.0));
        let b = assemble_load(&g, |_| 1.0, &q).unwrap();
        assert!((b[3] - 0.125).abs() < 1e-15);

        let c = CellGrid::new(2, 4).unwrap();
        let q2 = QuadratureRule::gauss(2, 2).unwrap();
        let bc = assemble_load(&c, |_| 2.5, &q2).unwrap();
        assert!(bc.iter().all(|v| (v - 2.5 / 16.0).abs() < 1e-15));
        let centered = assemble_load(&c, |_| 2.5 - 2.5, &q2).unwrap();
        assert!(centered.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn small_spd_system() {
        let system = SparseSystem {
            matrix: CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]),
            rhs: vec![1.0, 2.0],
        };
        let s = solve_dirichlet(&system, &BTreeMap::new(), None, &SolverOptions::default()).unwrap();
        assert!((s.values[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((s.values[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_zero_data_gives_zero() {
        let g = MacroGrid::new(1, 8).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let system = SparseSystem {
            matrix: assemble_stiffness(&g, |_| identity(1), &q).unwrap(),
            rhs: vec![0.0; 9],
        };
        let bc = g.boundary_nodes().into_iter().map(|n| (n, 0.0)).collect();
        let s = solve_dirichlet(&system, &bc, None, &SolverOptions::default()).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_1d_is_nodally_exact() {
        for m in [2usize, 8, 33] {
            let g = MacroGrid::new(1, m).unwrap();
            let q = QuadratureRule::gauss(1, 2).unwrap();
            let system = SparseSystem {
                matrix: assemble_stiffness(&g, |_| identity(1), &q).unwrap(),
                rhs: assemble_load(&g, |_| 1.0, &q).unwrap(),
            };
            let bc = g.boundary_nodes().into_iter().map(|n| (n, 0.0)).collect();
            let s = solve_dirichlet(&system, &bc, None, &SolverOptions::default()).unwrap();
            for (n, v) in s.values.iter().enumerate() {
                let x = g.node_coords(n)[0];
                assert!((v - x * (1.0 - x) / 2.0).abs() < 1e-11, "m = {m}");
            }
        }
    }

    #[test]
    fn inhomogeneous_dirichlet_linear_profile() {
        let g = MacroGrid::new(2, 6).unwrap();
        let q = QuadratureRule::gauss(2, 2).unwrap();
        let system = SparseSystem {
            matrix: assemble_stiffness(&g, |_| identity(2), &q).unwrap(),
            rhs: vec![0.0; g.node_count()],
        };
        let bc = g
            .boundary_nodes()
            .into_iter()
            .map(|n| (n, 1.0 + g.node_coords(n)[0]))
            .collect();
        let s = solve_dirichlet(&system, &bc, None, &SolverOptions::default()).unwrap();
        for (n, v) in s.values.iter().enumerate() {
            assert!((v - 1.0 - g.node_coords(n)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_solver_zero_and_incompatible() {
        let g = CellGrid::new(1, 16).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let matrix = assemble_stiffness(&g, |_| identity(1), &q).unwrap();
        let zero = SparseSystem {
            matrix: matrix.clone(),
            rhs: vec![0.0; 16],
        };
        let s = solve_periodic_zero_mean(&zero, &SolverOptions::default()).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        let bad = SparseSystem {
            matrix,
            rhs: assemble_load(&g, |_| 1.0, &q).unwrap(),
        };
        assert!(matches!(
            solve_periodic_zero_mean(&bad, &SolverOptions::default()),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn periodic_flux_problem_matches_antiderivative() {
        // cell-problem sign convention: int N' phi' = -int B phi', B = sin(2 pi y)
        let m = 256;
        let g = CellGrid::new(1, m).unwrap();
        let q = QuadratureRule::gauss(1, 2).unwrap();
        let system = SparseSystem {
            matrix: assemble_stiffness(&g, |_| identity(1), &q).unwrap(),
            rhs: assemble_flux_load(&g, |qp| [-(2.0 * PI * qp.x[0]).sin(), 0.0], &q).unwrap(),
        };
        let s = solve_periodic_zero_mean(&system, &SolverOptions::default()).unwrap();
        let mean = s.values.iter().sum::<f64>() / m as f64;
        assert!(mean.abs() < 1e-12);
        let h = 1.0 / m as f64;
        for (i, v) in s.values.iter().enumerate() {
            let y = i as f64 * h;
            assert!((v - (2.0 * PI * y).cos() / (2.0 * PI)).abs() < 2.0 * h * h);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let system = SparseSystem {
            matrix: CsrMatrix::from_dense(&[
                vec![4.0, 1.0, 0.0],
                vec![1.0, 3.0, 1.0],
                vec![0.0, 1.0, 2.0],
            ]),
            rhs: vec![1.0, 2.0, 3.0],
        };
        let opts = SolverOptions {
            max_iter_factor: 0,
            ..Default::default()
        };
        // a zero iteration budget still reports the starting residual
        let err = solve_dirichlet(&system, &BTreeMap::new(), None, &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { residual, .. } if (residual - 1.0).abs() < 1e-15));
    }

    #[test]
    fn solves_are_deterministic() {
        let g = CellGrid::new(2, 16).unwrap();
        let q = QuadratureRule::gauss(2, 2).unwrap();
        let build = || {
            let matrix = assemble_stiffness(
                &g,
                |qp| crate::tensor::scaled_identity(2, 2.0 + (2.0 * PI * qp.x[1]).cos()),
                &q,
            )
            .unwrap();
            let rhs = assemble_flux_load(&g, |qp| [(2.0 * PI * qp.x[0]).sin(), 0.3], &q).unwrap();
            solve_periodic_zero_mean(&SparseSystem { matrix, rhs }, &SolverOptions::default())
                .unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b);
    }
}
