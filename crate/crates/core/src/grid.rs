//! Structured tensor-product grids on the unit box.
//!
//! [`CellGrid`] discretizes the periodic cell `Y = [0,1]^n`: nodes on the face
//! `y_i = 1` are identified with the matching nodes on `y_i = 0`, so a field
//! carries one value per representative degree of freedom (`m^n` in total).
//! [`MacroGrid`] discretizes `Omega = [0,1]^n` with one value per node and
//! marks the nodes on the boundary for Dirichlet constraints.

use serde::{Deserialize, Serialize};

use crate::tensor::{Mat2, Point, Vec2};
use crate::{Error, Result};

/// Shared structure of the uniform tensor grids.
///
/// Elements are numbered lexicographically with the first axis fastest, and
/// the local nodes of an element are ordered `a + 2 b` for the offsets
/// `(a, b)` along each axis.
pub trait Grid: Copy + Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn cells_per_side(&self) -> usize;

    /// Number of stored values for a field on this grid.
    fn dof_count(&self) -> usize;

    /// Degree of freedom for the lattice node `(i, j)`, `0 <= i, j <= m`.
    fn lattice_dof(&self, i: usize, j: usize) -> usize;

    fn spacing(&self) -> f64 {
        1.0 / self.cells_per_side() as f64
    }

    fn element_count(&self) -> usize {
        self.cells_per_side().pow(self.dim() as u32)
    }

    fn nodes_per_element(&self) -> usize {
        1 << self.dim()
    }

    fn element_index(&self, e: usize) -> [usize; 2] {
        let m = self.cells_per_side();
        if self.dim() == 1 {
            [e, 0]
        } else {
            [e % m, e / m]
        }
    }

    fn element_origin(&self, e: usize) -> Point {
        let h = self.spacing();
        let [i, j] = self.element_index(e);
        [i as f64 * h, j as f64 * h]
    }

    fn element_dofs(&self, e: usize) -> [usize; 4] {
        let [i, j] = self.element_index(e);
        if self.dim() == 1 {
            [self.lattice_dof(i, 0), self.lattice_dof(i + 1, 0), 0, 0]
        } else {
            [
                self.lattice_dof(i, j),
                self.lattice_dof(i + 1, j),
                self.lattice_dof(i, j + 1),
                self.lattice_dof(i + 1, j + 1),
            ]
        }
    }
}

fn check_dims(dim: usize, m: usize, min_cells: usize) -> Result<()> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
    }
    if m < min_cells {
        return Err(Error::InvalidGrid(format!(
            "{m} cells per side, need at least {min_cells}"
        )));
    }
    Ok(())
}

// Lattice coordinates within rounding of a node are treated as the node.
fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r
    } else {
        t
    }
}

/// Periodic grid on the unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    dim: usize,
    cells_per_side: usize,
}

impl CellGrid {
    pub fn new(dim: usize, cells_per_side: usize) -> Result<Self> {
        check_dims(dim, cells_per_side, 2)?;
        Ok(Self { dim, cells_per_side })
    }

    /// Representative degree of freedom of lattice node `(i, j)`.
    pub fn periodic_map(&self, i: usize, j: usize) -> usize {
        let m = self.cells_per_side;
        if self.dim == 1 {
            i % m
        } else {
            (i % m) + (j % m) * m
        }
    }

    pub fn dof_coords(&self, dof: usize) -> Point {
        let m = self.cells_per_side;
        let h = self.spacing();
        if self.dim == 1 {
            [dof as f64 * h, 0.0]
        } else {
            [(dof % m) as f64 * h, (dof / m) as f64 * h]
        }
    }

    /// Lattice index of a grid-aligned shift, if `z` is a whole number of
    /// cells along every axis.
    pub fn aligned_shift(&self, z: &Vec2) -> Option<[i64; 2]> {
        let m = self.cells_per_side as f64;
        let mut out = [0i64; 2];
        for d in 0..self.dim {
            let s = z[d] * m;
            let r = s.round();
            if (s - r).abs() > 1e-9 {
                return None;
            }
            out[d] = r as i64;
        }
        Some(out)
    }

    /// Element containing `y` (reduced modulo 1) and the local coordinates.
    pub fn locate(&self, y: &Point) -> (usize, Point) {
        let m = self.cells_per_side;
        let mut idx = [0usize; 2];
        let mut local = [0.0; 2];
        for d in 0..self.dim {
            let t = snap(y[d].rem_euclid(1.0) * m as f64);
            let i = (t.floor() as usize).min(m - 1);
            idx[d] = i;
            local[d] = (t - i as f64).clamp(0.0, 1.0);
        }
        (idx[0] + idx[1] * m, local)
    }
}

impl Grid for CellGrid {
    fn dim(&self) -> usize {
        self.dim
    }
    fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }
    fn dof_count(&self) -> usize {
        self.cells_per_side.pow(self.dim as u32)
    }
    fn lattice_dof(&self, i: usize, j: usize) -> usize {
        self.periodic_map(i, j)
    }
}

/// Grid on `Omega = [0,1]^n` with every node a degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroGrid {
    dim: usize,
    cells_per_side: usize,
}

impl MacroGrid {
    pub fn new(dim: usize, cells_per_side: usize) -> Result<Self> {
        check_dims(dim, cells_per_side, 1)?;
        Ok(Self { dim, cells_per_side })
    }

    pub fn node_count(&self) -> usize {
        (self.cells_per_side + 1).pow(self.dim as u32)
    }

    pub fn interior_count(&self) -> usize {
        (self.cells_per_side - 1).pow(self.dim as u32)
    }

    pub fn node_index(&self, node: usize) -> [usize; 2] {
        let n = self.cells_per_side + 1;
        if self.dim == 1 {
            [node, 0]
        } else {
            [node % n, node / n]
        }
    }

    pub fn node_coords(&self, node: usize) -> Point {
        let h = self.spacing();
        let [i, j] = self.node_index(node);
        [i as f64 * h, j as f64 * h]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let m = self.cells_per_side;
        let idx = self.node_index(node);
        idx[..self.dim].iter().any(|&i| i == 0 || i == m)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.is_boundary(n)).collect()
    }

    /// Element containing `x` and the local coordinates; points outside the
    /// closed box by more than rounding are rejected.
    pub fn locate(&self, x: &Point) -> Result<(usize, Point)> {
        let m = self.cells_per_side;
        let mut idx = [0usize; 2];
        let mut local = [0.0; 2];
        for d in 0..self.dim {
            if !(-1e-12..=1.0 + 1e-12).contains(&x[d]) {
                return Err(Error::OutOfDomain(*x));
            }
            let t = snap(x[d].clamp(0.0, 1.0) * m as f64);
            let i = (t.floor() as usize).min(m - 1);
            idx[d] = i;
            local[d] = (t - i as f64).clamp(0.0, 1.0);
        }
        Ok((idx[0] + idx[1] * m, local))
    }
}

impl Grid for MacroGrid {
    fn dim(&self) -> usize {
        self.dim
    }
    fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }
    fn dof_count(&self) -> usize {
        self.node_count()
    }
    fn lattice_dof(&self, i: usize, j: usize) -> usize {
        i + j * (self.cells_per_side + 1)
    }
}

/// Q1 shape functions on the reference element, local node `a + 2 b`.
pub fn shape_values(dim: usize, local: &Point) -> [f64; 4] {
    let (s, t) = (local[0], local[1]);
    if dim == 1 {
        [1.0 - s, s, 0.0, 0.0]
    } else {
        [
            (1.0 - s) * (1.0 - t),
            s * (1.0 - t),
            (1.0 - s) * t,
            s * t,
        ]
    }
}

/// Reference-coordinate gradients of the Q1 shape functions.
pub fn shape_gradients(dim: usize, local: &Point) -> [Vec2; 4] {
    let (s, t) = (local[0], local[1]);
    if dim == 1 {
        [[-1.0, 0.0], [1.0, 0.0], [0.0; 2], [0.0; 2]]
    } else {
        [
            [-(1.0 - t), -(1.0 - s)],
            [1.0 - t, -s],
            [-t, 1.0 - s],
            [t, s],
        ]
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<G: Grid> {
    grid: G,
    values: Vec<f64>,
}

pub type CellField = ScalarField<CellGrid>;
pub type MacroField = ScalarField<MacroGrid>;

impl<G: Grid> ScalarField<G> {
    pub fn new(grid: G, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dof_count() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid with {} degrees of freedom",
                values.len(),
                grid.dof_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at dof {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: G) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.dof_count()],
        }
    }

    pub fn grid(&self) -> &G {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value of the Q1 interpolant inside element `e`.
    pub fn eval_local(&self, e: usize, local: &Point) -> f64 {
        let dofs = self.grid.element_dofs(e);
        let n = shape_values(self.grid.dim(), local);
        (0..self.grid.nodes_per_element())
            .map(|k| n[k] * self.values[dofs[k]])
            .sum()
    }

    /// Physical gradient of the Q1 interpolant inside element `e`.
    pub fn grad_local(&self, e: usize, local: &Point) -> Vec2 {
        let dofs = self.grid.element_dofs(e);
        let g = shape_gradients(self.grid.dim(), local);
        let inv_h = 1.0 / self.grid.spacing();
        let mut out = [0.0; 2];
        for k in 0..self.grid.nodes_per_element() {
            let v = self.values[dofs[k]];
            out[0] += g[k][0] * v * inv_h;
            out[1] += g[k][1] * v * inv_h;
        }
        out
    }

    /// Discrete mean: on uniform grids every lumped mass is equal.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl ScalarField<CellGrid> {
    /// Multilinear interpolation at `y`, reduced modulo 1 on every axis.
    pub fn interpolate(&self, y: &Point) -> f64 {
        let (e, local) = self.grid.locate(y);
        self.eval_local(e, &local)
    }
}

impl ScalarField<MacroGrid> {
    pub fn interpolate(&self, x: &Point) -> Result<f64> {
        let (e, local) = self.grid.locate(x)?;
        Ok(self.eval_local(e, &local))
    }
}

/// Nodal gradient by second-order finite differences: central in the
/// interior, three-point one-sided at the boundary.
pub fn fd_gradient(field: &MacroField) -> Result<Vec<Vec2>> {
    let grid = *field.grid();
    let m = grid.cells_per_side();
    if m < 3 {
        return Err(Error::InvalidGrid(format!(
            "gradient recovery needs at least 3 cells per side, got {m}"
        )));
    }
    let h = grid.spacing();
    let u = field.values();
    let dim = grid.dim();
    let out = (0..grid.node_count())
        .map(|node| {
            let idx = grid.node_index(node);
            let mut g = [0.0; 2];
            for d in 0..dim {
                let at = |k: usize| {
                    let mut ij = idx;
                    ij[d] = k;
                    u[grid.lattice_dof(ij[0], ij[1])]
                };
                let i = idx[d];
                g[d] = if i == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if i == m {
                    (3.0 * at(m) - 4.0 * at(m - 1) + at(m - 2)) / (2.0 * h)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * h)
                };
            }
            g
        })
        .collect();
    Ok(out)
}

/// Nodal Hessian by the standard three-point and four-point cross stencils.
/// Boundary nodes take the value of the nearest interior node.
pub fn fd_hessian(field: &MacroField) -> Result<Vec<Mat2>> {
    let grid = *field.grid();
    let m = grid.cells_per_side();
    if m < 4 {
        return Err(Error::InvalidGrid(format!(
            "Hessian recovery needs at least 4 cells per side, got {m}"
        )));
    }
    let h2 = grid.spacing().powi(2);
    let u = field.values();
    let dim = grid.dim();
    let at = |i: usize, j: usize| u[grid.lattice_dof(i, j)];
    let out = (0..grid.node_count())
        .map(|node| {
            let [i0, j0] = grid.node_index(node);
            let i = i0.clamp(1, m - 1);
            let mut hess = [[0.0; 2]; 2];
            if dim == 1 {
                hess[0][0] = (at(i + 1, 0) - 2.0 * at(i, 0) + at(i - 1, 0)) / h2;
                return hess;
            }
            let j = j0.clamp(1, m - 1);
            hess[0][0] = (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / h2;
            hess[1][1] = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / h2;
            let cross = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1)
                + at(i - 1, j - 1))
                / (4.0 * h2);
            hess[0][1] = cross;
            hess[1][0] = cross;
            hess
        })
        .collect();
    Ok(out)
}

fn hermite_basis(t: f64) -> ([f64; 2], [f64; 2]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2],
        [t3 - 2.0 * t2 + t, t3 - t2],
    )
}

/// Piecewise cubic (bicubic in 2-D) Hermite interpolation from nodal values,
/// gradients and Hessians. Reproduces cubics exactly when the derivative data
/// are exact, and its gradient is continuous across element faces.
pub fn hermite_interpolate(
    field: &MacroField,
    grad: &[Vec2],
    hess: &[Mat2],
    x: &Point,
) -> Result<f64> {
    let grid = *field.grid();
    let (e, local) = grid.locate(x)?;
    let dofs = grid.element_dofs(e);
    let h = grid.spacing();
    let u = field.values();
    let (hv_s, hd_s) = hermite_basis(local[0]);
    if grid.dim() == 1 {
        return Ok(hv_s[0] * u[dofs[0]]
            + hd_s[0] * h * grad[dofs[0]][0]
            + hv_s[1] * u[dofs[1]]
            + hd_s[1] * h * grad[dofs[1]][0]);
    }
    let (hv_t, hd_t) = hermite_basis(local[1]);
    let mut sum = 0.0;
    for b in 0..2 {
        for a in 0..2 {
            let n = dofs[a + 2 * b];
            sum += hv_s[a] * hv_t[b] * u[n]
                + hd_s[a] * hv_t[b] * h * grad[n][0]
                + hv_s[a] * hd_t[b] * h * grad[n][1]
                + hd_s[a] * hd_t[b] * h * h * hess[n][0][1];
        }
    }
    Ok(sum)
}
