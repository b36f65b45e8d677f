//! Periodic cell problems.
//!
//! For a parameter pair `(u, x)` the first-order correctors `N_m` solve
//! `int a grad N_m . grad phi = -int a_{m.} . grad phi` on the periodic cell,
//! and the homogenized tensor is `a0_ij = int (a_ij + a_il d_l N_j)`.
//! The second-order correctors are
//!
//! * `M_kl`: volume load `c_kl - <c_kl>` with `c_kl = a_kl + a_km d_m N_l`,
//!   plus flux load `-a_{k.} N_l`; stored symmetrized in `(k, l)`;
//! * `Q_k`: driven by total `x`-derivatives of `N_k` and of the centred flux
//!   `c - <c>`, and by the first-order coefficient term `A1 = u1 dA/du`;
//! * `R`: volume load `f - <f>`.
//!
//! `Q_k` depends on the macro gradient `g = grad u0` only through
//! `Q_k = Q_k^0 + g_m Q_k^m`, so the table stores the parts `Q_k^0` and
//! `Q_k^m`, which are independent of the macro solution. Derivatives with
//! respect to the parameters are second-order differences over the table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::Coefficient;
use crate::fem::{
    assemble_flux_load, assemble_load, assemble_stiffness, compatibility_defect, solve_periodic_zero_mean,
    CsrMatrix, QuadPoint, QuadratureRule, SolverOptions, SparseSystem,
};
use crate::grid::{CellField, CellGrid, Grid};
use crate::tensor::{self, Mat2, Point, Vec2};
use crate::{Error, Result};

/// Lattice of `(u, x)` samples at which correctors are tabulated.
///
/// `u` samples are uniform on the admissible range; `x` samples form a
/// uniform lattice on `[0,1]^n` including the boundary. Sample `s` has
/// multi-index `(iu, ix, iy)` with `s = iu + S_u (ix + S_x iy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    dim: usize,
    u_samples: Vec<f64>,
    x_per_axis: usize,
}

impl ParameterGrid {
    pub fn new(dim: usize, u_samples: Vec<f64>, x_per_axis: usize) -> Result<Self> {
        if u_samples.is_empty() || x_per_axis == 0 {
            return Err(Error::Config("parameter grid needs at least one sample per axis".into()));
        }
        if u_samples.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("u samples must be strictly increasing".into()));
        }
        if u_samples.len() >= 3 {
            let step = u_samples[1] - u_samples[0];
            if u_samples
                .windows(2)
                .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1e-300))
            {
                return Err(Error::Config("u samples must be uniformly spaced".into()));
            }
        }
        Ok(Self {
            dim,
            u_samples,
            x_per_axis,
        })
    }

    /// Uniform samples with the given counts (`None` picks 5 where the model
    /// depends on that parameter and 1 otherwise).
    pub fn for_model(model: &dyn Coefficient, s_u: Option<usize>, s_x: Option<usize>) -> Result<Self> {
        let dim = model.dim();
        let [lo, hi] = model.u_range();
        let s_u = s_u.unwrap_or(if model.depends_on_u() { 5 } else { 1 });
        let s_x = s_x.unwrap_or(if model.depends_on_x() { 5 } else { 1 });
        if model.depends_on_u() && s_u < 3 {
            return Err(Error::Config(format!(
                "the coefficient depends on u, so at least 3 u samples are needed (got {s_u})"
            )));
        }
        if model.depends_on_x() && s_x < 3 {
            return Err(Error::Config(format!(
                "the coefficient depends on x, so at least 3 x samples per axis are needed (got {s_x})"
            )));
        }
        if s_u == 0 || s_x == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if s_u > 1 && !(hi > lo) {
            return Err(Error::Config("u range is a single point but several u samples were requested".into()));
        }
        let u_samples = if s_u == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..s_u).map(|i| lo + (hi - lo) * i as f64 / (s_u - 1) as f64).collect()
        };
        Self::new(dim, u_samples, s_x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn u_samples(&self) -> &[f64] {
        &self.u_samples
    }

    pub fn x_per_axis(&self) -> usize {
        self.x_per_axis
    }

    pub fn x_axis_value(&self, i: usize) -> f64 {
        if self.x_per_axis == 1 {
            0.5
        } else {
            i as f64 / (self.x_per_axis - 1) as f64
        }
    }

    pub fn len(&self) -> usize {
        self.u_samples.len() * self.x_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(iu, ix, iy)` of sample `s`.
    pub fn multi_index(&self, s: usize) -> [usize; 3] {
        let su = self.u_samples.len();
        let sx = self.x_per_axis;
        let iu = s % su;
        let rest = s / su;
        if self.dim == 1 {
            [iu, rest, 0]
        } else {
            [iu, rest % sx, rest / sx]
        }
    }

    pub fn index(&self, idx: [usize; 3]) -> usize {
        let su = self.u_samples.len();
        idx[0] + su * (idx[1] + self.x_per_axis * idx[2])
    }

    pub fn sample(&self, s: usize) -> (f64, Point) {
        let [iu, ix, iy] = self.multi_index(s);
        let x = if self.dim == 1 {
            [self.x_axis_value(ix), 0.0]
        } else {
            [self.x_axis_value(ix), self.x_axis_value(iy)]
        };
        (self.u_samples[iu], x)
    }

    fn axis_len(&self, axis: usize) -> usize {
        if axis == 0 {
            self.u_samples.len()
        } else if axis <= self.dim {
            self.x_per_axis
        } else {
            1
        }
    }

    fn axis_step(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.u_samples[1] - self.u_samples[0]
        } else {
            1.0 / (self.x_per_axis - 1) as f64
        }
    }

    /// Second-order difference stencil for the derivative along `axis`
    /// (0 for `u`, `1 + d` for `x_d`) at sample `s`.
    pub fn derivative_stencil(&self, s: usize, axis: usize) -> Result<Vec<(usize, f64)>> {
        let n = self.axis_len(axis);
        if n < 3 {
            return Err(Error::Config(format!(
                "derivative along parameter axis {axis} needs at least 3 samples, got {n}"
            )));
        }
        let h = self.axis_step(axis);
        let idx = self.multi_index(s);
        let i = idx[axis];
        let at = |k: usize| {
            let mut j = idx;
            j[axis] = k;
            self.index(j)
        };
        Ok(if i == 0 {
            vec![(at(0), -1.5 / h), (at(1), 2.0 / h), (at(2), -0.5 / h)]
        } else if i == n - 1 {
            vec![(at(n - 1), 1.5 / h), (at(n - 2), -2.0 / h), (at(n - 3), 0.5 / h)]
        } else {
            vec![(at(i + 1), 0.5 / h), (at(i - 1), -0.5 / h)]
        })
    }

    /// Multilinear interpolation weights; `u` and `x` are clamped to the
    /// sampled box.
    pub fn weights(&self, u: f64, x: &Point) -> Vec<(usize, f64)> {
        let axis_weights = |axis: usize, v: f64| -> Vec<(usize, f64)> {
            let n = self.axis_len(axis);
            if n == 1 {
                return vec![(0, 1.0)];
            }
            let (lo, h) = if axis == 0 {
                (self.u_samples[0], self.axis_step(0))
            } else {
                (0.0, self.axis_step(axis))
            };
            let mut t = ((v - lo) / h).clamp(0.0, (n - 1) as f64);
            let r = t.round();
            if (t - r).abs() < 1e-12 {
                t = r;
            }
            let i = (t.floor() as usize).min(n - 2);
            let frac = t - i as f64;
            if frac == 0.0 {
                vec![(i, 1.0)]
            } else if frac == 1.0 {
                vec![(i + 1, 1.0)]
            } else {
                vec![(i, 1.0 - frac), (i + 1, frac)]
            }
        };
        let wu = axis_weights(0, u);
        let wx = axis_weights(1, x[0]);
        let wy = if self.dim == 2 {
            axis_weights(2, x[1])
        } else {
            vec![(0, 1.0)]
        };
        let mut out = Vec::with_capacity(wu.len() * wx.len() * wy.len());
        for &(iy, ay) in &wy {
            for &(ix, ax) in &wx {
                for &(iu, au) in &wu {
                    out.push((self.index([iu, ix, iy]), au * ax * ay));
                }
            }
        }
        out
    }
}

/// Discretization settings for the cell problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellOptions {
    /// Gauss points per axis; `None` picks 2, or 3 for cubic-in-u models.
    pub quadrature: Option<usize>,
    pub solver: SolverOptions,
    /// Largest tolerated `|a0 - a0^T|` before a warning is logged.
    pub symmetry_tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            quadrature: None,
            solver: SolverOptions::default(),
            symmetry_tol: 1e-8,
        }
    }
}

/// Homogenized tensor at one sample with the bounds it was checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A0Sample {
    pub a0: Mat2,
    /// `max |a0_ij - a0_ji|` before symmetrization.
    pub asymmetry: f64,
    /// Arithmetic mean `int A`.
    pub voigt: Mat2,
    /// Inverse of the harmonic mean `(int A^-1)^-1`.
    pub reuss: Mat2,
}

/// Largest violations of the solvability and mean-zero conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    /// `|sum b| / sum |b|` over all assembled right-hand sides.
    pub max_rhs_relative_mean: f64,
    /// Largest absolute discrete mean of a stored corrector.
    pub max_corrector_mean: f64,
    pub max_a0_asymmetry: f64,
    pub solves: usize,
    pub cg_iterations: usize,
}

impl CellDiagnostics {
    fn merge(&mut self, o: &CellDiagnostics) {
        self.max_rhs_relative_mean = self.max_rhs_relative_mean.max(o.max_rhs_relative_mean);
        self.max_corrector_mean = self.max_corrector_mean.max(o.max_corrector_mean);
        self.max_a0_asymmetry = self.max_a0_asymmetry.max(o.max_a0_asymmetry);
        self.solves += o.solves;
        self.cg_iterations += o.cg_iterations;
    }
}

/// Packed position of the symmetric pair `(k, l)`.
pub fn sym_index(dim: usize, k: usize, l: usize) -> usize {
    let (a, b) = if k <= l { (k, l) } else { (l, k) };
    if dim == 1 {
        0
    } else {
        a + b
    }
}

pub fn sym_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Coefficient data of one sample at every quadrature point.
struct PointData {
    nq: usize,
    a: Vec<Mat2>,
    da: Vec<Mat2>,
    f: Vec<f64>,
}

impl PointData {
    fn at(&self, qp: &QuadPoint) -> usize {
        qp.element * self.nq + qp.index
    }
}

/// Solves the cell problems of one coefficient on one cell grid.
pub struct CellSolver<'a> {
    model: &'a dyn Coefficient,
    grid: CellGrid,
    quad: QuadratureRule,
    opts: CellOptions,
}

struct Solved {
    field: CellField,
    diag: CellDiagnostics,
}

impl<'a> CellSolver<'a> {
    pub fn new(model: &'a dyn Coefficient, grid: CellGrid, opts: CellOptions) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(Error::Config(format!(
                "coefficient dimension {} does not match cell grid dimension {}",
                model.dim(),
                grid.dim()
            )));
        }
        let points = opts
            .quadrature
            .unwrap_or(if model.is_cubic_in_u() { 3 } else { 2 });
        Ok(Self {
            model,
            grid,
            quad: QuadratureRule::gauss(grid.dim(), points)?,
            opts,
        })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    fn point_data(&self, u: f64, x: &Point, shift: &Vec2) -> Result<PointData> {
        if !(u.is_finite() && x.iter().chain(shift).all(|v| v.is_finite())) {
            return Err(Error::NonFinite("cell problem parameters"));
        }
        let u = self.model.clamp_u(u);
        let nq = self.quad.len();
        let h = self.grid.spacing();
        let rows: Vec<(Mat2, Mat2, f64)> = (0..self.grid.element_count())
            .into_par_iter()
            .flat_map_iter(|e| {
                let origin = self.grid.element_origin(e);
                self.quad.points().iter().map(move |p| {
                    let y = [origin[0] + p[0] * h + shift[0], origin[1] + p[1] * h + shift[1]];
                    (
                        self.model.a(u, x, &y),
                        self.model.da_du(u, x, &y),
                        self.model.f(u, x, &y),
                    )
                })
            })
            .collect();
        let mut a = Vec::with_capacity(rows.len());
        let mut da = Vec::with_capacity(rows.len());
        let mut f = Vec::with_capacity(rows.len());
        for (ai, di, fi) in rows {
            a.push(ai);
            da.push(di);
            f.push(fi);
        }
        Ok(PointData { nq, a, da, f })
    }

    fn stiffness(&self, data: &PointData) -> Result<CsrMatrix> {
        assemble_stiffness(&self.grid, |qp| data.a[data.at(qp)], &self.quad)
    }

    fn solve_rhs(&self, matrix: &CsrMatrix, rhs: Vec<f64>) -> Result<Solved> {
        let system = SparseSystem {
            matrix: matrix.clone(),
            rhs,
        };
        let rel = compatibility_defect(&system).unwrap_or(0.0);
        let sol = solve_periodic_zero_mean(&system, &self.opts.solver)?;
        let field = CellField::new(self.grid, sol.values)?;
        let diag = CellDiagnostics {
            max_rhs_relative_mean: rel,
            max_corrector_mean: field.mean().abs(),
            max_a0_asymmetry: 0.0,
            solves: 1,
            cg_iterations: sol.iterations,
        };
        Ok(Solved { field, diag })
    }

    fn flux_and_volume<B, S>(&self, flux: B, volume: S) -> Result<Vec<f64>>
    where
        B: Fn(&QuadPoint) -> Vec2 + Sync,
        S: Fn(&QuadPoint) -> f64 + Sync,
    {
        let mut rhs = assemble_flux_load(&self.grid, flux, &self.quad)?;
        let vol = assemble_load(&self.grid, volume, &self.quad)?;
        rhs.iter_mut().zip(vol).for_each(|(r, v)| *r += v);
        Ok(rhs)
    }

    fn solve_n_with(&self, data: &PointData, k: &CsrMatrix, diag: &mut CellDiagnostics) -> Result<Vec<CellField>> {
        let dim = self.grid.dim();
        (0..dim)
            .map(|m| {
                let rhs = assemble_flux_load(
                    &self.grid,
                    |qp| {
                        let a = &data.a[data.at(qp)];
                        [-a[m][0], -a[m][1]]
                    },
                    &self.quad,
                )?;
                let s = self.solve_rhs(k, rhs)?;
                diag.merge(&s.diag);
                Ok(s.field)
            })
            .collect()
    }

    /// First-order correctors `N_1 .. N_n` at `(u, x)`.
    pub fn solve_n(&self, u: f64, x: &Point) -> Result<Vec<CellField>> {
        let data = self.point_data(u, x, &[0.0; 2])?;
        let k = self.stiffness(&data)?;
        self.solve_n_with(&data, &k, &mut CellDiagnostics::default())
    }

    fn grads_at(&self, fields: &[CellField]) -> Vec<Vec<Vec2>> {
        fields
            .iter()
            .map(|f| {
                (0..self.grid.element_count())
                    .flat_map(|e| self.quad.points().iter().map(move |p| f.grad_local(e, p)))
                    .collect()
            })
            .collect()
    }

    fn values_at(&self, fields: &[CellField]) -> Vec<Vec<f64>> {
        fields
            .iter()
            .map(|f| {
                (0..self.grid.element_count())
                    .flat_map(|e| self.quad.points().iter().map(move |p| f.eval_local(e, p)))
                    .collect()
            })
            .collect()
    }

    fn weights_flat(&self) -> Vec<f64> {
        let measure = self.grid.spacing().powi(self.grid.dim() as i32);
        (0..self.grid.element_count())
            .flat_map(|_| self.quad.weights().iter().map(move |w| w * measure))
            .collect()
    }

    /// `c_ik = a_ik + a_il d_l N_k` at every quadrature point.
    fn flux_matrix(&self, data: &PointData, grads: &[Vec<Vec2>]) -> Vec<Mat2> {
        let dim = self.grid.dim();
        (0..data.a.len())
            .map(|p| {
                let a = &data.a[p];
                let mut c = tensor::ZERO;
                for i in 0..dim {
                    for k in 0..dim {
                        let mut v = a[i][k];
                        for l in 0..dim {
                            v += a[i][l] * grads[k][p][l];
                        }
                        c[i][k] = v;
                    }
                }
                c
            })
            .collect()
    }

    fn a0_from(&self, data: &PointData, c: &[Mat2]) -> Result<A0Sample> {
        let dim = self.grid.dim();
        let w = self.weights_flat();
        let mut raw = tensor::ZERO;
        let mut voigt = tensor::ZERO;
        let mut harm = tensor::ZERO;
        for p in 0..c.len() {
            raw = tensor::add(&raw, &tensor::scale(&c[p], w[p]));
            voigt = tensor::add(&voigt, &tensor::scale(&data.a[p], w[p]));
            let inv = tensor::inverse(&data.a[p], dim)
                .ok_or_else(|| Error::InvalidModel("singular coefficient in the cell".into()))?;
            harm = tensor::add(&harm, &tensor::scale(&inv, w[p]));
        }
        let asymmetry = (raw[0][1] - raw[1][0]).abs();
        if asymmetry > self.opts.symmetry_tol {
            log::warn!("homogenized tensor asymmetry {asymmetry:e} before symmetrization");
        }
        let a0 = tensor::symmetrize(&raw);
        let reuss = tensor::inverse(&harm, dim)
            .ok_or_else(|| Error::InvalidModel("singular harmonic mean".into()))?;
        let sample = A0Sample {
            a0,
            asymmetry,
            voigt,
            reuss,
        };
        check_voigt_reuss(&sample, dim, self.model.ellipticity()[1])?;
        Ok(sample)
    }

    /// `a0_ij = int (a_ij + a_il d_l N_j)`, symmetrized, with the bound check.
    pub fn compute_a0(&self, u: f64, x: &Point, n: &[CellField]) -> Result<A0Sample> {
        let data = self.point_data(u, x, &[0.0; 2])?;
        let grads = self.grads_at(n);
        let c = self.flux_matrix(&data, &grads);
        self.a0_from(&data, &c)
    }

    fn solve_m_with(
        &self,
        data: &PointData,
        k: &CsrMatrix,
        n_vals: &[Vec<f64>],
        c: &[Mat2],
        c_mean: &Mat2,
        diag: &mut CellDiagnostics,
    ) -> Result<Vec<CellField>> {
        let dim = self.grid.dim();
        let mut out = Vec::with_capacity(sym_count(dim));
        for k1 in 0..dim {
            for l1 in k1..dim {
                // average of the (k, l) and (l, k) right-hand sides
                let pairs = [(k1, l1), (l1, k1)];
                let rhs = self.flux_and_volume(
                    |qp| {
                        let p = data.at(qp);
                        let a = &data.a[p];
                        let mut b = [0.0; 2];
                        for (kk, ll) in pairs {
                            for (m, bm) in b.iter_mut().enumerate().take(dim) {
                                *bm -= 0.5 * a[kk][m] * n_vals[ll][p];
                            }
                        }
                        b
                    },
                    |qp| {
                        let p = data.at(qp);
                        pairs
                            .iter()
                            .map(|&(kk, ll)| 0.5 * (c[p][kk][ll] - c_mean[kk][ll]))
                            .sum()
                    },
                )?;
                let s = self.solve_rhs(k, rhs)?;
                diag.merge(&s.diag);
                out.push(s.field);
            }
        }
        Ok(out)
    }

    /// Second-order correctors `M_kl` (packed symmetric, see [`sym_index`]).
    pub fn solve_m(&self, u: f64, x: &Point, n: &[CellField]) -> Result<Vec<CellField>> {
        let data = self.point_data(u, x, &[0.0; 2])?;
        let k = self.stiffness(&data)?;
        let grads = self.grads_at(n);
        let c = self.flux_matrix(&data, &grads);
        let c_mean = self.mean_matrix(&c);
        let n_vals = self.values_at(n);
        self.solve_m_with(&data, &k, &n_vals, &c, &c_mean, &mut CellDiagnostics::default())
    }

    fn mean_matrix(&self, c: &[Mat2]) -> Mat2 {
        let w = self.weights_flat();
        c.iter()
            .zip(&w)
            .fold(tensor::ZERO, |acc, (m, wi)| tensor::add(&acc, &tensor::scale(m, *wi)))
    }

    fn solve_r_with(&self, data: &PointData, k: &CsrMatrix, diag: &mut CellDiagnostics) -> Result<CellField> {
        let w = self.weights_flat();
        let mean: f64 = data.f.iter().zip(&w).map(|(f, w)| f * w).sum();
        let rhs = assemble_load(&self.grid, |qp| data.f[data.at(qp)] - mean, &self.quad)?;
        let s = self.solve_rhs(k, rhs)?;
        diag.merge(&s.diag);
        Ok(s.field)
    }

    /// Source corrector `R` at `(u, x)`.
    pub fn solve_r(&self, u: f64, x: &Point) -> Result<CellField> {
        let data = self.point_data(u, x, &[0.0; 2])?;
        let k = self.stiffness(&data)?;
        self.solve_r_with(&data, &k, &mut CellDiagnostics::default())
    }

    /// First pass at one sample: `N`, `a0`, `M`, `R` and the quadrature-point
    /// data the `Q` pass needs.
    fn first_pass(&self, u: f64, x: &Point) -> Result<FirstPass> {
        let mut diag = CellDiagnostics::default();
        let data = self.point_data(u, x, &[0.0; 2])?;
        let k = self.stiffness(&data)?;
        let n = self.solve_n_with(&data, &k, &mut diag)?;
        let grads = self.grads_at(&n);
        let n_vals = self.values_at(&n);
        let c = self.flux_matrix(&data, &grads);
        let a0 = self.a0_from(&data, &c)?;
        diag.max_a0_asymmetry = a0.asymmetry;
        let c_mean = self.mean_matrix(&c);
        let m = self.solve_m_with(&data, &k, &n_vals, &c, &c_mean, &mut diag)?;
        let r = self.solve_r_with(&data, &k, &mut diag)?;
        let c_tilde = c.iter().map(|ci| tensor::sub(ci, &c_mean)).collect();
        Ok(FirstPass {
            n,
            m,
            r,
            a0,
            diag,
            stiffness: k,
            data,
            grads,
            n_vals,
            c_tilde,
        })
    }

    /// Translation check: solves the `N_1` and `R` problems with all data
    /// evaluated at `y + z` and compares with the periodic extension of the
    /// unshifted solutions.
    pub fn check_translation_invariance(&self, u: f64, x: &Point, z: &Vec2) -> Result<TranslationReport> {
        let base = self.point_data(u, x, &[0.0; 2])?;
        let kb = self.stiffness(&base)?;
        let mut diag = CellDiagnostics::default();
        let n = self.solve_n_with(&base, &kb, &mut diag)?;
        let r = self.solve_r_with(&base, &kb, &mut diag)?;

        let shifted = self.point_data(u, x, z)?;
        let ks = self.stiffness(&shifted)?;
        let ns = self.solve_n_with(&shifted, &ks, &mut diag)?;
        let rs = self.solve_r_with(&shifted, &ks, &mut diag)?;

        let dim = self.grid.dim();
        let m = self.grid.cells_per_side() as i64;
        let aligned = self.grid.aligned_shift(z);
        let integer = (0..dim).all(|d| z[d] == z[d].round());
        let compare = |orig: &CellField, moved: &CellField| -> f64 {
            (0..self.grid.dof_count())
                .map(|i| {
                    let expected = match aligned {
                        Some(s) => {
                            let y = self.grid.dof_coords(i);
                            let li = ((y[0] * m as f64).round() as i64 + s[0]).rem_euclid(m) as usize;
                            let lj = if dim == 2 {
                                ((y[1] * m as f64).round() as i64 + s[1]).rem_euclid(m) as usize
                            } else {
                                0
                            };
                            orig.values()[self.grid.periodic_map(li, lj)]
                        }
                        None => {
                            let y = self.grid.dof_coords(i);
                            orig.interpolate(&[y[0] + z[0], y[1] + z[1]])
                        }
                    };
                    (moved.values()[i] - expected).abs()
                })
                .fold(0.0, f64::max)
        };
        let discrepancy = compare(&n[0], &ns[0]).max(compare(&r, &rs));
        let tolerance = if integer {
            1e-12
        } else if aligned.is_some() {
            10.0 * self.opts.solver.cg_tol
        } else {
            // interpolating a Q1 field off the lattice costs O(h |grad|)
            let grad_max = [&n[0], &r]
                .iter()
                .flat_map(|f| {
                    (0..self.grid.element_count())
                        .map(move |e| tensor::norm(&f.grad_local(e, &[0.5, 0.5])))
                })
                .fold(0.0, f64::max);
            2.0 * self.grid.spacing() * grad_max
        };
        Ok(TranslationReport {
            shift: *z,
            aligned: aligned.is_some(),
            discrepancy,
            tolerance,
        })
    }
}

fn check_voigt_reuss(s: &A0Sample, dim: usize, scale: f64) -> Result<()> {
    let slack = 1e-10 * scale.abs().max(1.0);
    let lower = tensor::sym_eigenvalues(&tensor::sub(&s.a0, &s.reuss), dim)[0];
    let upper = tensor::sym_eigenvalues(&tensor::sub(&s.voigt, &s.a0), dim)[0];
    if lower < -slack || upper < -slack {
        return Err(Error::VoigtReuss(format!(
            "a0 = {:?}, harmonic bound {:?}, arithmetic bound {:?}",
            s.a0, s.reuss, s.voigt
        )));
    }
    Ok(())
}

/// Outcome of a translation-invariance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub shift: Vec2,
    /// Whether the shift is a whole number of cell-grid spacings.
    pub aligned: bool,
    /// Largest nodal difference between shifted and translated correctors.
    pub discrepancy: f64,
    /// Tolerance appropriate to the kind of shift.
    pub tolerance: f64,
}

impl TranslationReport {
    pub fn passed(&self) -> bool {
        self.discrepancy <= self.tolerance
    }
}

struct FirstPass {
    n: Vec<CellField>,
    m: Vec<CellField>,
    r: CellField,
    a0: A0Sample,
    diag: CellDiagnostics,
    stiffness: CsrMatrix,
    data: PointData,
    grads: Vec<Vec<Vec2>>,
    n_vals: Vec<Vec<f64>>,
    c_tilde: Vec<Mat2>,
}

/// Parts of `Q_k = Q_k^0 + g_m Q_k^m` at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct QParts {
    /// `Q_k^0`, driven by explicit `x`-dependence.
    pub base: Vec<CellField>,
    /// `Q_k^m` indexed `[k][m]`, driven by `u`-dependence.
    pub gradient: Vec<Vec<CellField>>,
}

/// Everything the `Q` problems need from the first pass over all samples.
pub struct QContext<'s, 'a> {
    solver: &'s CellSolver<'a>,
    params: ParameterGrid,
    passes: Vec<FirstPass>,
}

impl QContext<'_, '_> {
    fn fd<T, F>(&self, s: usize, axis: usize, get: F) -> Result<Vec<T>>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
        F: Fn(&FirstPass) -> &[T],
    {
        let stencil = self.params.derivative_stencil(s, axis)?;
        let len = get(&self.passes[s]).len();
        let mut out = vec![T::default(); len];
        for (t, w) in stencil {
            let src = get(&self.passes[t]);
            for (o, v) in out.iter_mut().zip(src) {
                *o = *o + *v * w;
            }
        }
        Ok(out)
    }

    fn fd_mat(&self, s: usize, axis: usize) -> Result<Vec<Mat2>> {
        let stencil = self.params.derivative_stencil(s, axis)?;
        let len = self.passes[s].c_tilde.len();
        let mut out = vec![tensor::ZERO; len];
        for (t, w) in stencil {
            for (o, v) in out.iter_mut().zip(&self.passes[t].c_tilde) {
                *o = tensor::add(o, &tensor::scale(v, w));
            }
        }
        Ok(out)
    }

    fn rhs_base(&self, s: usize) -> Result<Vec<Vec<f64>>> {
        let sv = self.solver;
        let dim = sv.grid.dim();
        let fp = &self.passes[s];
        // explicit x-derivatives of N_k values and of the centred flux
        let mut dn: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dim);
        let mut dc: Vec<Vec<Mat2>> = Vec::with_capacity(dim);
        for l in 0..dim {
            let mut per_k = Vec::with_capacity(dim);
            for k in 0..dim {
                per_k.push(self.fd(s, 1 + l, |p| p.n_vals[k].as_slice())?);
            }
            dn.push(per_k);
            dc.push(self.fd_mat(s, 1 + l)?);
        }
        (0..dim)
            .map(|k| {
                sv.flux_and_volume(
                    |qp| {
                        let p = fp.data.at(qp);
                        let a = &fp.data.a[p];
                        let mut b = [0.0; 2];
                        for (i, bi) in b.iter_mut().enumerate().take(dim) {
                            for l in 0..dim {
                                *bi -= a[i][l] * dn[l][k][p];
                            }
                        }
                        b
                    },
                    |qp| {
                        let p = fp.data.at(qp);
                        (0..dim).map(|i| dc[i][p][i][k]).sum()
                    },
                )
            })
            .collect()
    }

    fn rhs_gradient(&self, s: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let sv = self.solver;
        let dim = sv.grid.dim();
        let fp = &self.passes[s];
        let mut dn_du = Vec::with_capacity(dim);
        for k in 0..dim {
            dn_du.push(self.fd(s, 0, |p| p.n_vals[k].as_slice())?);
        }
        let dc_du = self.fd_mat(s, 0)?;
        (0..dim)
            .map(|k| {
                (0..dim)
                    .map(|m| {
                        sv.flux_and_volume(
                            |qp| {
                                let p = fp.data.at(qp);
                                let a = &fp.data.a[p];
                                let da = &fp.data.da[p];
                                let nm = fp.n_vals[m][p];
                                let gk = &fp.grads[k][p];
                                let mut b = [0.0; 2];
                                for (i, bi) in b.iter_mut().enumerate().take(dim) {
                                    let mut t = a[i][m] * dn_du[k][p] + nm * da[i][k];
                                    for l in 0..dim {
                                        t += nm * da[i][l] * gk[l];
                                    }
                                    *bi = -t;
                                }
                                b
                            },
                            |qp| dc_du[fp.data.at(qp)][m][k],
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// The parts `Q_k^0`, `Q_k^m` at sample `s`; parts whose driving
    /// dependence is absent are zero without a solve.
    pub fn solve_q_parts(&self, s: usize) -> Result<(QParts, CellDiagnostics)> {
        let sv = self.solver;
        let dim = sv.grid.dim();
        let k = &self.passes[s].stiffness;
        let mut diag = CellDiagnostics::default();
        let zero = CellField::zeros(sv.grid);
        let base = if sv.model.depends_on_x() {
            self.rhs_base(s)?
                .into_iter()
                .map(|rhs| {
                    let r = sv.solve_rhs(k, rhs)?;
                    diag.merge(&r.diag);
                    Ok(r.field)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![zero.clone(); dim]
        };
        let gradient = if sv.model.depends_on_u() {
            self.rhs_gradient(s)?
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|rhs| {
                            let r = sv.solve_rhs(k, rhs)?;
                            diag.merge(&r.diag);
                            Ok(r.field)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![vec![zero; dim]; dim]
        };
        Ok((QParts { base, gradient }, diag))
    }

    /// `Q_k` at sample `s` for one macro gradient `g`, by a single solve.
    pub fn solve_q(&self, s: usize, g: &Vec2) -> Result<Vec<CellField>> {
        let sv = self.solver;
        let dim = sv.grid.dim();
        let ndof = sv.grid.dof_count();
        let base = if sv.model.depends_on_x() {
            self.rhs_base(s)?
        } else {
            vec![vec![0.0; ndof]; dim]
        };
        let grad = if sv.model.depends_on_u() {
            Some(self.rhs_gradient(s)?)
        } else {
            None
        };
        (0..dim)
            .map(|k| {
                let mut rhs = base[k].clone();
                if let Some(gr) = &grad {
                    for (m, part) in gr[k].iter().enumerate() {
                        rhs.iter_mut().zip(part).for_each(|(r, v)| *r += g[m] * v);
                    }
                }
                Ok(sv.solve_rhs(&self.passes[s].stiffness, rhs)?.field)
            })
            .collect()
    }

    pub fn params(&self) -> &ParameterGrid {
        &self.params
    }
}

fn wrap_sample(params: &ParameterGrid, s: usize, e: Error) -> Error {
    let (u, x) = params.sample(s);
    Error::Sample {
        u,
        x,
        source: Box::new(e),
    }
}

impl<'a> CellSolver<'a> {
    /// Runs the first pass at every sample of `params`.
    pub fn q_context<'s>(&'s self, params: &ParameterGrid) -> Result<QContext<'s, 'a>> {
        let passes = (0..params.len())
            .into_par_iter()
            .map(|s| {
                let (u, x) = params.sample(s);
                self.first_pass(u, &x).map_err(|e| wrap_sample(params, s, e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QContext {
            solver: self,
            params: params.clone(),
            passes,
        })
    }

    /// Correctors and homogenized tensor at every sample of `params`.
    ///
    /// Samples are processed in parallel and collected in sample order, so
    /// the result does not depend on the number of threads.
    pub fn build_tables(&self, params: &ParameterGrid) -> Result<(CorrectorSet, HomogenizedTensor)> {
        let ctx = self.q_context(params)?;
        let q: Vec<(QParts, CellDiagnostics)> = (0..params.len())
            .into_par_iter()
            .map(|s| ctx.solve_q_parts(s).map_err(|e| wrap_sample(params, s, e)))
            .collect::<Result<_>>()?;
        let mut diagnostics = CellDiagnostics::default();
        let mut samples = Vec::with_capacity(params.len());
        let mut a0 = Vec::with_capacity(params.len());
        for (s, (fp, (qp, qd))) in ctx.passes.into_iter().zip(q).enumerate() {
            diagnostics.merge(&fp.diag);
            diagnostics.merge(&qd);
            let (u, x) = params.sample(s);
            a0.push(fp.a0);
            samples.push(CorrectorSample {
                u,
                x,
                n: fp.n,
                m: fp.m,
                q: qp,
                r: fp.r,
            });
        }
        let set = CorrectorSet {
            grid: self.grid,
            params: params.clone(),
            samples,
            diagnostics,
        };
        let tensor = HomogenizedTensor {
            params: params.clone(),
            samples: a0,
        };
        Ok((set, tensor))
    }
}

/// Correctors at one `(u, x)` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSample {
    pub u: f64,
    pub x: Point,
    pub n: Vec<CellField>,
    /// Packed symmetric `M_kl`, see [`sym_index`].
    pub m: Vec<CellField>,
    pub q: QParts,
    pub r: CellField,
}

impl CorrectorSample {
    /// Every stored field with a descriptive name.
    pub fn named_fields(&self) -> Vec<(String, &CellField)> {
        let dim = self.n.len();
        let mut out = Vec::new();
        for (m, f) in self.n.iter().enumerate() {
            out.push((format!("N{}", m + 1), f));
        }
        for k in 0..dim {
            for l in k..dim {
                out.push((format!("M{}{}", k + 1, l + 1), &self.m[sym_index(dim, k, l)]));
            }
        }
        for (k, f) in self.q.base.iter().enumerate() {
            out.push((format!("Q{}_0", k + 1), f));
        }
        for (k, row) in self.q.gradient.iter().enumerate() {
            for (m, f) in row.iter().enumerate() {
                out.push((format!("Q{}_g{}", k + 1, m + 1), f));
            }
        }
        out.push(("R".to_string(), &self.r));
        out
    }
}

/// Point values of all correctors at some `(u, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorrectorValues {
    pub n: Vec2,
    /// Symmetric `M_kl`.
    pub m: Mat2,
    pub q_base: Vec2,
    /// `Q_k^m` as `[k][m]`.
    pub q_gradient: Mat2,
    pub r: f64,
}

impl CorrectorValues {
    /// `Q_k = Q_k^0 + g_m Q_k^m`.
    pub fn q(&self, g: &Vec2) -> Vec2 {
        let qg = tensor::mat_vec(&self.q_gradient, g);
        [self.q_base[0] + qg[0], self.q_base[1] + qg[1]]
    }
}

/// Tabulated correctors over a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorSet {
    grid: CellGrid,
    params: ParameterGrid,
    samples: Vec<CorrectorSample>,
    diagnostics: CellDiagnostics,
}

impl CorrectorSet {
    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn params(&self) -> &ParameterGrid {
        &self.params
    }

    pub fn samples(&self) -> &[CorrectorSample] {
        &self.samples
    }

    pub fn diagnostics(&self) -> &CellDiagnostics {
        &self.diagnostics
    }

    /// Interpolated corrector values: multilinear over the parameter grid,
    /// Q1 over the cell grid at `y` (reduced modulo 1).
    pub fn eval(&self, u: f64, x: &Point, y: &Point) -> CorrectorValues {
        let dim = self.grid.dim();
        let (e, local) = self.grid.locate(y);
        let mut out = CorrectorValues::default();
        for (s, w) in self.params.weights(u, x) {
            let smp = &self.samples[s];
            for k in 0..dim {
                out.n[k] += w * smp.n[k].eval_local(e, &local);
                out.q_base[k] += w * smp.q.base[k].eval_local(e, &local);
                for l in 0..dim {
                    out.m[k][l] += w * smp.m[sym_index(dim, k, l)].eval_local(e, &local);
                    out.q_gradient[k][l] += w * smp.q.gradient[k][l].eval_local(e, &local);
                }
            }
            out.r += w * smp.r.eval_local(e, &local);
        }
        out
    }
}

/// Homogenized tensor samples over a parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedTensor {
    params: ParameterGrid,
    samples: Vec<A0Sample>,
}

impl HomogenizedTensor {
    /// Table from given values, e.g. a closed-form tensor.
    pub fn from_values(params: ParameterGrid, values: Vec<Mat2>) -> Result<Self> {
        if values.len() != params.len() {
            return Err(Error::Config(format!(
                "{} tensor values for {} samples",
                values.len(),
                params.len()
            )));
        }
        let samples = values
            .into_iter()
            .map(|a0| A0Sample {
                a0,
                asymmetry: 0.0,
                voigt: a0,
                reuss: a0,
            })
            .collect();
        Ok(Self { params, samples })
    }

    pub fn params(&self) -> &ParameterGrid {
        &self.params
    }

    pub fn samples(&self) -> &[A0Sample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Multilinear interpolation of `a0` at `(u, x)`.
    pub fn lookup(&self, u: f64, x: &Point) -> Mat2 {
        self.params
            .weights(u, x)
            .into_iter()
            .fold(tensor::ZERO, |acc, (s, w)| tensor::add(&acc, &tensor::scale(&self.samples[s].a0, w)))
    }

    /// Whether `a0` varies with `u` anywhere in the table.
    pub fn depends_on_u(&self) -> bool {
        let su = self.params.u_samples().len();
        su > 1
            && (0..self.samples.len()).any(|s| {
                let iu = s % su;
                iu > 0 && self.samples[s].a0 != self.samples[s - iu].a0
            })
    }

    /// Smallest margin of any sample inside its Voigt and Reuss bounds
    /// (negative on violation).
    pub fn bound_margin(&self) -> f64 {
        let dim = self.dim();
        self.samples
            .iter()
            .map(|s| {
                let lo = tensor::sym_eigenvalues(&tensor::sub(&s.a0, &s.reuss), dim)[0];
                let hi = tensor::sym_eigenvalues(&tensor::sub(&s.voigt, &s.a0), dim)[0];
                lo.min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientFamily, CoefficientModel, MatrixParam, Profile, SourceModel};
    use std::f64::consts::PI;

    fn smooth_1d(m_c: usize) -> (CoefficientModel, CellGrid) {
        (
            CoefficientModel::smooth_periodic(1, 2.0, 1.0, 1.0).unwrap(),
            CellGrid::new(1, m_c).unwrap(),
        )
    }

    #[test]
    fn parameter_grid_indexing_and_weights() {
        let p = ParameterGrid::new(2, vec![0.0, 0.5, 1.0], 3).unwrap();
        assert_eq!(p.len(), 27);
        for s in 0..p.len() {
            assert_eq!(p.index(p.multi_index(s)), s);
        }
        let (u, x) = p.sample(p.index([1, 2, 0]));
        assert_eq!((u, x), (0.5, [1.0, 0.0]));
        let w = p.weights(0.5, &[1.0, 0.0]);
        assert_eq!(w, vec![(p.index([1, 2, 0]), 1.0)]);
        let w = p.weights(0.25, &[1.0, 0.0]);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|&(_, v)| (v - 0.5).abs() < 1e-15));
        assert!(ParameterGrid::new(1, vec![0.0, 0.0], 1).is_err());
        assert!(ParameterGrid::new(1, vec![0.0, 0.1, 1.0], 1).is_err());
        let st = p.derivative_stencil(0, 0).unwrap();
        let vals: f64 = st.iter().map(|&(s, c)| c * p.sample(s).0.powi(2)).sum();
        assert!(vals.abs() < 1e-14); // d/du u^2 at u = 0
        let single = ParameterGrid::new(1, vec![0.5], 1).unwrap();
        assert!(single.derivative_stencil(0, 0).is_err());
    }

    #[test]
    fn constant_coefficient_gives_zero_correctors() {
        let model = CoefficientModel::constant(2, 3.0, 1.0).unwrap();
        let grid = CellGrid::new(2, 8).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let params = ParameterGrid::for_model(&model, None, None).unwrap();
        assert_eq!(params.len(), 1);
        let (set, a0) = solver.build_tables(&params).unwrap();
        let smp = &set.samples()[0];
        for (_, f) in smp.named_fields() {
            assert!(f.values().iter().all(|v| v.abs() < 1e-14));
        }
        assert!(tensor::max_abs_diff(&a0.lookup(0.3, &[0.2, 0.1]), &tensor::scaled_identity(2, 3.0)) < 1e-14);
    }

    #[test]
    fn harmonic_mean_and_corrector_1d() {
        let (model, grid) = smooth_1d(128);
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let n = solver.solve_n(0.5, &[0.5, 0.0]).unwrap();
        let a0 = solver.compute_a0(0.5, &[0.5, 0.0], &n).unwrap();
        assert!((a0.a0[0][0] - 3f64.sqrt()).abs() < 1e-4);
        // N' = a0/a - 1, integrated by fine trapezoid sums
        let k = 20_000;
        let mut prim = vec![0.0; k + 1];
        for i in 0..k {
            let g = |y: f64| 3f64.sqrt() / (2.0 + (2.0 * PI * y).sin()) - 1.0;
            let (y0, y1) = (i as f64 / k as f64, (i + 1) as f64 / k as f64);
            prim[i + 1] = prim[i] + 0.5 * (g(y0) + g(y1)) / k as f64;
        }
        let mean = prim[..k].iter().sum::<f64>() / k as f64;
        for (i, v) in n[0].values().iter().enumerate() {
            let exact = prim[i * k / 128] - mean;
            assert!((v - exact).abs() < 5e-4, "node {i}: {v} vs {exact}");
        }
    }

    #[test]
    fn source_corrector_1d() {
        let model = CoefficientModel::new(
            1,
            CoefficientFamily::Constant {
                matrix: MatrixParam::Scalar(1.0),
            },
            SourceModel {
                constant: 0.0,
                linear_u: 0.0,
                sin_amplitude: 1.0,
                cos_amplitude: 0.0,
            },
            [0.0, 1.0],
        )
        .unwrap();
        let grid = CellGrid::new(1, 128).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let r = solver.solve_r(0.5, &[0.5, 0.0]).unwrap();
        let h = 1.0 / 128.0;
        for (i, v) in r.values().iter().enumerate() {
            let y = i as f64 * h;
            assert!((v - (2.0 * PI * y).sin() / (4.0 * PI * PI)).abs() < h * h);
        }
    }

    #[test]
    fn swap_symmetric_coefficient_swaps_correctors() {
        let model = CoefficientModel::smooth_periodic(2, 2.0, 1.0, 1.0).unwrap();
        let grid = CellGrid::new(2, 16).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let n = solver.solve_n(0.5, &[0.5, 0.5]).unwrap();
        for j in 0..16 {
            for i in 0..16 {
                let a = n[1].values()[grid.periodic_map(i, j)];
                let b = n[0].values()[grid.periodic_map(j, i)];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sharp_laminate() {
        let model = CoefficientModel::new(
            2,
            CoefficientFamily::Layered {
                low: 1.0,
                high: 4.0,
                fraction: 0.5,
                axis: 0,
                width: Some(0.0),
                matrix: MatrixParam::Scalar(1.0),
            },
            SourceModel::constant(1.0),
            [0.0, 1.0],
        )
        .unwrap();
        let grid = CellGrid::new(2, 8).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let n = solver.solve_n(0.0, &[0.5, 0.5]).unwrap();
        let a0 = solver.compute_a0(0.0, &[0.5, 0.5], &n).unwrap().a0;
        // interfaces on element faces: the Q1 solution is exact
        assert!((a0[0][0] - 1.6).abs() < 1e-8);
        assert!((a0[1][1] - 2.5).abs() < 1e-8);
        assert!(a0[0][1].abs() < 1e-10);
    }

    #[test]
    fn second_order_correctors_mean_zero_and_symmetric() {
        let model = CoefficientModel::new(
            2,
            CoefficientFamily::SmoothPeriodic {
                profile: Profile {
                    base: 2.0,
                    amplitude: 0.7,
                    frequencies: [1, 2],
                    x_modulation: 0.0,
                },
                matrix: MatrixParam::Full([[1.0, 0.3], [0.3, 1.5]]),
            },
            SourceModel {
                constant: 1.0,
                linear_u: 0.0,
                sin_amplitude: 0.5,
                cos_amplitude: 0.0,
            },
            [0.0, 1.0],
        )
        .unwrap();
        let grid = CellGrid::new(2, 16).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let params = ParameterGrid::for_model(&model, None, None).unwrap();
        let (set, a0) = solver.build_tables(&params).unwrap();
        let d = set.diagnostics();
        assert!(d.max_rhs_relative_mean <= 1e-8, "{d:?}");
        assert!(d.max_corrector_mean <= 1e-12, "{d:?}");
        assert!(a0.bound_margin() > -1e-10);
        assert_eq!(set.samples()[0].m.len(), 3);
    }

    #[test]
    fn translation_shifts() {
        let (model, grid) = smooth_1d(32);
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let x = [0.5, 0.0];
        let zero = solver.check_translation_invariance(0.5, &x, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.discrepancy, 0.0);
        let int = solver.check_translation_invariance(0.5, &x, &[2.0, 0.0]).unwrap();
        assert!(int.discrepancy <= 1e-12, "{int:?}");
        let half = solver.check_translation_invariance(0.5, &x, &[0.5, 0.0]).unwrap();
        assert!(half.aligned && half.passed(), "{half:?}");
        let off = solver.check_translation_invariance(0.5, &x, &[0.013, 0.0]).unwrap();
        assert!(!off.aligned && off.passed(), "{off:?}");
    }

    #[test]
    fn rosseland_table_harmonic_means() {
        let model = CoefficientModel::new(
            1,
            CoefficientFamily::Rosseland {
                k: Profile::sine(2.0, 1.0),
                k_matrix: MatrixParam::Scalar(1.0),
                b: MatrixParam::Scalar(1.0),
            },
            SourceModel::constant(1.0),
            [0.0, 1.0],
        )
        .unwrap();
        let grid = CellGrid::new(1, 128).unwrap();
        let solver = CellSolver::new(&model, grid, CellOptions::default()).unwrap();
        let params = ParameterGrid::for_model(&model, Some(3), None).unwrap();
        let (_, a0) = solver.build_tables(&params).unwrap();
        for (s, smp) in a0.samples().iter().enumerate() {
            let u = params.sample(s).0;
            let k = 100_000;
            let inv: f64 = (0..k)
                .map(|i| {
                    let y = (i as f64 + 0.5) / k as f64;
                    1.0 / (2.0 + (2.0 * PI * y).sin() + 4.0 * u.powi(3))
                })
                .sum::<f64>()
                / k as f64;
            assert!((smp.a0[0][0] - 1.0 / inv).abs() < 1e-4, "u = {u}");
        }
    }
}
