//! Coefficient families `a_ij(u, x, y)` and sources `f(u, x, y)`.
//!
//! Anything implementing [`Coefficient`] can drive the cell, macro and fine
//! solvers. [`CoefficientModel`] is the data-configured implementation with
//! the built-in families. Evaluators clamp `u` into the admissible range so
//! that transient Picard iterates cannot destroy ellipticity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::tensor::{self, Mat2, Point, Vec2};
use crate::{Error, Result};

/// Evaluator contract shared by all coefficient models.
pub trait Coefficient: Send + Sync {
    fn dim(&self) -> usize;

    /// Admissible range `[u_lo, u_hi]` of the unknown.
    fn u_range(&self) -> [f64; 2];

    /// Raw coefficient; callers normally go through [`Coefficient::eval_a`].
    fn a(&self, u: f64, x: &Point, y: &Point) -> Mat2;

    fn f(&self, u: f64, x: &Point, y: &Point) -> f64;

    /// `d a / d u`; central differences unless overridden.
    fn da_du(&self, u: f64, x: &Point, y: &Point) -> Mat2 {
        let d = fd_step(self.u_range());
        let hi = self.a(u + d, x, y);
        let lo = self.a(u - d, x, y);
        tensor::scale(&tensor::sub(&hi, &lo), 0.5 / d)
    }

    fn df_du(&self, u: f64, x: &Point, y: &Point) -> f64 {
        let d = fd_step(self.u_range());
        (self.f(u + d, x, y) - self.f(u - d, x, y)) / (2.0 * d)
    }

    fn depends_on_u(&self) -> bool {
        true
    }

    fn depends_on_x(&self) -> bool {
        true
    }

    /// Declared ellipticity constants `(lambda, Lambda)`.
    fn ellipticity(&self) -> [f64; 2];

    /// Whether `a` is a cubic polynomial in `u` (selects a richer quadrature).
    fn is_cubic_in_u(&self) -> bool {
        false
    }

    /// Closed form of `int_Y f(u, x, y) dy` when one is known.
    fn source_mean(&self, _u: f64, _x: &Point) -> Option<f64> {
        None
    }

    fn clamp_u(&self, u: f64) -> f64 {
        let [lo, hi] = self.u_range();
        u.clamp(lo, hi)
    }

    fn eval_a(&self, u: f64, x: &Point, y: &Point) -> Result<Mat2> {
        check_inputs(u, x, y, "eval_a")?;
        Ok(self.a(self.clamp_u(u), x, y))
    }

    fn eval_da_du(&self, u: f64, x: &Point, y: &Point) -> Result<Mat2> {
        check_inputs(u, x, y, "eval_da_du")?;
        Ok(self.da_du(self.clamp_u(u), x, y))
    }

    fn eval_f(&self, u: f64, x: &Point, y: &Point) -> Result<f64> {
        check_inputs(u, x, y, "eval_f")?;
        Ok(self.f(self.clamp_u(u), x, y))
    }

    fn eval_df_du(&self, u: f64, x: &Point, y: &Point) -> Result<f64> {
        check_inputs(u, x, y, "eval_df_du")?;
        Ok(self.df_du(self.clamp_u(u), x, y))
    }

    /// First-order term `A1 = u1 dA/du(u0)` with `u1 = N_l d_l u0`.
    fn eval_a1(
        &self,
        u0: f64,
        grad_u0: &Vec2,
        n_values: &Vec2,
        x: &Point,
        y: &Point,
    ) -> Result<Mat2> {
        if !(tensor::dot(grad_u0, grad_u0).is_finite() && tensor::dot(n_values, n_values).is_finite()) {
            return Err(Error::NonFinite("eval_a1"));
        }
        let u1 = tensor::dot(n_values, grad_u0);
        if u1 == 0.0 || !self.depends_on_u() {
            return Ok(tensor::ZERO);
        }
        Ok(tensor::scale(&self.eval_da_du(u0, x, y)?, u1))
    }
}

fn fd_step(range: [f64; 2]) -> f64 {
    let w = range[1] - range[0];
    if w > 0.0 {
        1e-6 * w
    } else {
        1e-6
    }
}

fn check_inputs(u: f64, x: &Point, y: &Point, what: &'static str) -> Result<()> {
    if u.is_finite() && x.iter().chain(y).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A matrix parameter: a scalar multiple of the identity or a full matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixParam {
    Scalar(f64),
    Full(Mat2),
}

impl Default for MatrixParam {
    fn default() -> Self {
        MatrixParam::Scalar(1.0)
    }
}

impl MatrixParam {
    pub fn resolve(&self, dim: usize) -> Mat2 {
        match self {
            MatrixParam::Scalar(s) => tensor::scaled_identity(dim, *s),
            MatrixParam::Full(m) if dim == 1 => [[m[0][0], 0.0], [0.0, 0.0]],
            MatrixParam::Full(m) => *m,
        }
    }
}

fn spd_matrix(p: &MatrixParam, dim: usize, name: &str, allow_zero: bool) -> Result<(Mat2, Vec2)> {
    let m = p.resolve(dim);
    if !tensor::is_finite(&m) {
        return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
    }
    if dim == 2 && m[0][1] != m[1][0] {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    let ev = tensor::sym_eigenvalues(&m, dim);
    let ok = if allow_zero { ev[0] >= 0.0 } else { ev[0] > 0.0 };
    if !ok {
        return Err(Error::InvalidModel(format!(
            "{name} must be positive {}definite, smallest eigenvalue {}",
            if allow_zero { "semi" } else { "" },
            ev[0]
        )));
    }
    Ok((m, [ev[0], ev[dim - 1]]))
}

/// Scalar periodic profile
/// `p(x, y) = base + amplitude (1 + x_modulation x_1) prod_i sin(2 pi k_i y_i)`,
/// where a zero frequency drops that axis from the product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Profile {
    pub base: f64,
    pub amplitude: f64,
    pub frequencies: [u32; 2],
    pub x_modulation: f64,
}

impl Default for Profile {
    fn default() -> Self {
        Self {
            base: 1.0,
            amplitude: 0.0,
            frequencies: [1, 1],
            x_modulation: 0.0,
        }
    }
}

impl Profile {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            amplitude: 0.0,
            ..Default::default()
        }
    }

    pub fn sine(base: f64, amplitude: f64) -> Self {
        Self {
            base,
            amplitude,
            ..Default::default()
        }
    }

    pub fn eval(&self, dim: usize, x: &Point, y: &Point) -> f64 {
        if self.amplitude == 0.0 {
            return self.base;
        }
        let mut prod = 1.0;
        for d in 0..dim {
            let k = self.frequencies[d];
            if k != 0 {
                prod *= (2.0 * PI * k as f64 * y[d]).sin();
            }
        }
        self.base + self.amplitude * (1.0 + self.x_modulation * x[0]) * prod
    }

    fn range(&self) -> [f64; 2] {
        let m = self.amplitude.abs() * (1.0f64).max((1.0 + self.x_modulation).abs());
        [self.base - m, self.base + m]
    }

    fn depends_on_x(&self) -> bool {
        self.amplitude != 0.0 && self.x_modulation != 0.0
    }
}

/// Built-in coefficient families, selected by the `family` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoefficientFamily {
    /// `a = A`.
    Constant {
        #[serde(default)]
        matrix: MatrixParam,
    },
    /// `a = p(x, y) A`.
    SmoothPeriodic {
        #[serde(default)]
        profile: Profile,
        #[serde(default)]
        matrix: MatrixParam,
    },
    /// Laminate with layers normal to `axis`: `high` on `[fraction, 1)`,
    /// `low` elsewhere, joined by C1 ramps of total width `width`
    /// (zero gives the sharp laminate; `None` defers to the caller's default).
    Layered {
        low: f64,
        high: f64,
        #[serde(default = "half")]
        fraction: f64,
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        width: Option<f64>,
        #[serde(default)]
        matrix: MatrixParam,
    },
    /// Radiative conduction: `a = k(x, y) K + 4 u^3 B`.
    Rosseland {
        #[serde(default)]
        k: Profile,
        #[serde(default)]
        k_matrix: MatrixParam,
        #[serde(default)]
        b: MatrixParam,
    },
    /// Separated dependence: `a = (mu0 + mu_u2 u^2 + mu_x x_1) g(x, y) A`.
    Separated {
        #[serde(default = "one")]
        mu0: f64,
        #[serde(default)]
        mu_u2: f64,
        #[serde(default)]
        mu_x: f64,
        #[serde(default)]
        g: Profile,
        #[serde(default)]
        matrix: MatrixParam,
    },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

/// Source `f = constant + linear_u u + sin_amplitude sin(2 pi y_1) + cos_amplitude cos(2 pi y_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceModel {
    pub constant: f64,
    pub linear_u: f64,
    pub sin_amplitude: f64,
    pub cos_amplitude: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl SourceModel {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            linear_u: 0.0,
            sin_amplitude: 0.0,
            cos_amplitude: 0.0,
        }
    }

    pub fn eval(&self, u: f64, y: &Point) -> f64 {
        let t = 2.0 * PI * y[0];
        let mut v = self.constant + self.linear_u * u;
        if self.sin_amplitude != 0.0 {
            v += self.sin_amplitude * t.sin();
        }
        if self.cos_amplitude != 0.0 {
            v += self.cos_amplitude * t.cos();
        }
        v
    }
}

/// A validated family instance with its source and admissible `u` range.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    dim: usize,
    family: CoefficientFamily,
    source: SourceModel,
    u_range: [f64; 2],
    ellipticity: [f64; 2],
    kind: Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved {
    Scaled { profile: Profile, m: Mat2 },
    Layered { low: f64, high: f64, fraction: f64, axis: usize, width: f64, m: Mat2 },
    Rosseland { k: Profile, km: Mat2, b: Mat2 },
    Separated { mu0: f64, mu_u2: f64, mu_x: f64, g: Profile, m: Mat2 },
}

// C1 ramp from 0 at t = -1/2 to 1 at t = 1/2.
fn smoothstep(t: f64) -> f64 {
    let s = (t + 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn layer_indicator(r: f64, fraction: f64, width: f64) -> f64 {
    let r = r.rem_euclid(1.0);
    if width == 0.0 {
        return if r >= fraction { 1.0 } else { 0.0 };
    }
    smoothstep((r - fraction) / width) - smoothstep(r / width) + 1.0 - smoothstep((r - 1.0) / width)
}

fn interval_mul(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let c = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
    [
        c.iter().cloned().fold(f64::INFINITY, f64::min),
        c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ]
}

impl CoefficientModel {
    pub fn new(
        dim: usize,
        family: CoefficientFamily,
        source: SourceModel,
        u_range: [f64; 2],
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidModel(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(u_range[0].is_finite() && u_range[1].is_finite() && u_range[0] <= u_range[1]) {
            return Err(Error::InvalidModel(format!(
                "u range [{}, {}] is not a finite interval",
                u_range[0], u_range[1]
            )));
        }
        let src = [source.constant, source.linear_u, source.sin_amplitude, source.cos_amplitude];
        if !src.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("source has non-finite parameters".into()));
        }
        let positive = |r: [f64; 2], what: &str| -> Result<()> {
            if r[0] > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!(
                    "{what} takes values down to {}; it must stay positive",
                    r[0]
                )))
            }
        };
        let (kind, ellipticity) = match &family {
            CoefficientFamily::Constant { matrix } => {
                let (m, ev) = spd_matrix(matrix, dim, "matrix", false)?;
                (Resolved::Scaled { profile: Profile::constant(1.0), m }, ev)
            }
            CoefficientFamily::SmoothPeriodic { profile, matrix } => {
                let (m, ev) = spd_matrix(matrix, dim, "matrix", false)?;
                let r = profile.range();
                positive(r, "profile")?;
                (Resolved::Scaled { profile: *profile, m }, [r[0] * ev[0], r[1] * ev[1]])
            }
            CoefficientFamily::Layered { low, high, fraction, axis, width, matrix } => {
                let (m, ev) = spd_matrix(matrix, dim, "matrix", false)?;
                if *axis >= dim {
                    return Err(Error::InvalidModel(format!("layer axis {axis} out of range")));
                }
                let width = width.ok_or_else(|| {
                    Error::InvalidModel("layer transition width not set".into())
                })?;
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::InvalidModel(format!("layer fraction {fraction} not in (0, 1)")));
                }
                if !(width >= 0.0 && width <= fraction.min(1.0 - fraction)) {
                    return Err(Error::InvalidModel(format!(
                        "layer width {width} must lie in [0, {}]",
                        fraction.min(1.0 - fraction)
                    )));
                }
                let r = [low.min(*high), low.max(*high)];
                positive(r, "layer value")?;
                (
                    Resolved::Layered {
                        low: *low,
                        high: *high,
                        fraction: *fraction,
                        axis: *axis,
                        width,
                        m,
                    },
                    [r[0] * ev[0], r[1] * ev[1]],
                )
            }
            CoefficientFamily::Rosseland { k, k_matrix, b } => {
                let (km, kev) = spd_matrix(k_matrix, dim, "k_matrix", false)?;
                let (bm, bev) = spd_matrix(b, dim, "b", true)?;
                let kr = k.range();
                positive(kr, "k profile")?;
                let t = [4.0 * u_range[0].powi(3), 4.0 * u_range[1].powi(3)];
                let rad = interval_mul(t, bev);
                let lam = [kr[0] * kev[0] + rad[0], kr[1] * kev[1] + rad[1]];
                positive(lam, "Rosseland coefficient eigenvalue")?;
                (Resolved::Rosseland { k: *k, km, b: bm }, lam)
            }
            CoefficientFamily::Separated { mu0, mu_u2, mu_x, g, matrix } => {
                let (m, ev) = spd_matrix(matrix, dim, "matrix", false)?;
                let sq = if u_range[0] <= 0.0 && u_range[1] >= 0.0 {
                    [0.0, u_range[0].powi(2).max(u_range[1].powi(2))]
                } else {
                    let a = u_range[0].powi(2);
                    let b = u_range[1].powi(2);
                    [a.min(b), a.max(b)]
                };
                let uu = interval_mul([*mu_u2, *mu_u2], sq);
                let xx = interval_mul([*mu_x, *mu_x], [0.0, 1.0]);
                let mu = [mu0 + uu[0] + xx[0], mu0 + uu[1] + xx[1]];
                positive(mu, "mu")?;
                let gr = g.range();
                positive(gr, "g profile")?;
                (
                    Resolved::Separated {
                        mu0: *mu0,
                        mu_u2: *mu_u2,
                        mu_x: *mu_x,
                        g: *g,
                        m,
                    },
                    [mu[0] * gr[0] * ev[0], mu[1] * gr[1] * ev[1]],
                )
            }
        };
        Ok(Self {
            dim,
            family,
            source,
            u_range,
            ellipticity,
            kind,
        })
    }

    /// Linear model with constant coefficient matrix and source.
    pub fn constant(dim: usize, a: f64, f: f64) -> Result<Self> {
        Self::new(
            dim,
            CoefficientFamily::Constant {
                matrix: MatrixParam::Scalar(a),
            },
            SourceModel::constant(f),
            [0.0, 1.0],
        )
    }

    /// `a = (base + amplitude prod sin(2 pi y_i)) I` with a constant source.
    pub fn smooth_periodic(dim: usize, base: f64, amplitude: f64, f: f64) -> Result<Self> {
        Self::new(
            dim,
            CoefficientFamily::SmoothPeriodic {
                profile: Profile::sine(base, amplitude),
                matrix: MatrixParam::Scalar(1.0),
            },
            SourceModel::constant(f),
            [0.0, 1.0],
        )
    }

    pub fn family(&self) -> &CoefficientFamily {
        &self.family
    }

    pub fn source(&self) -> &SourceModel {
        &self.source
    }

    /// Checks the declared ellipticity constants on a lattice of
    /// `10^n` cell points, 10 macro points per axis and 10 values of `u`.
    pub fn validate_by_sampling(&self) -> Result<()> {
        let [lam, big] = self.ellipticity;
        let slack = 1e-12 * big.abs().max(1.0);
        let n = 10usize;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|i| (i as f64 + 0.37) / n as f64).collect();
        let us: Vec<f64> = (0..n)
            .map(|i| self.u_range[0] + (self.u_range[1] - self.u_range[0]) * i as f64 / (n - 1) as f64)
            .collect();
        let pts = |v: &[f64]| -> Vec<Point> {
            if self.dim == 1 {
                v.iter().map(|&a| [a, 0.0]).collect()
            } else {
                v.iter().flat_map(|&b| v.iter().map(move |&a| [a, b])).collect()
            }
        };
        let ypts = pts(&ys);
        let xpts: Vec<Point> = if self.dim == 1 {
            xs.iter().map(|&a| [a, 0.0]).collect()
        } else {
            xs.iter().map(|&a| [a, 1.0 - a]).collect()
        };
        for &u in &us {
            for x in &xpts {
                for y in &ypts {
                    let ev = tensor::sym_eigenvalues(&self.a(u, x, y), self.dim);
                    if ev[0] < lam - slack || ev[self.dim - 1] > big + slack {
                        return Err(Error::InvalidModel(format!(
                            "eigenvalues {:?} at u = {u}, x = {x:?}, y = {y:?} outside [{lam}, {big}]",
                            &ev[..self.dim]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Coefficient for CoefficientModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn u_range(&self) -> [f64; 2] {
        self.u_range
    }

    fn a(&self, u: f64, x: &Point, y: &Point) -> Mat2 {
        match &self.kind {
            Resolved::Scaled { profile, m } => tensor::scale(m, profile.eval(self.dim, x, y)),
            Resolved::Layered { low, high, fraction, axis, width, m } => {
                let h = layer_indicator(y[*axis], *fraction, *width);
                tensor::scale(m, low + (high - low) * h)
            }
            Resolved::Rosseland { k, km, b } => tensor::add(
                &tensor::scale(km, k.eval(self.dim, x, y)),
                &tensor::scale(b, 4.0 * u * u * u),
            ),
            Resolved::Separated { mu0, mu_u2, mu_x, g, m } => {
                let mu = mu0 + mu_u2 * u * u + mu_x * x[0];
                tensor::scale(m, mu * g.eval(self.dim, x, y))
            }
        }
    }

    fn da_du(&self, u: f64, x: &Point, y: &Point) -> Mat2 {
        match &self.kind {
            Resolved::Scaled { .. } | Resolved::Layered { .. } => tensor::ZERO,
            Resolved::Rosseland { b, .. } => tensor::scale(b, 12.0 * u * u),
            Resolved::Separated { mu_u2, g, m, .. } => {
                tensor::scale(m, 2.0 * mu_u2 * u * g.eval(self.dim, x, y))
            }
        }
    }

    fn f(&self, u: f64, _x: &Point, y: &Point) -> f64 {
        self.source.eval(u, y)
    }

    fn df_du(&self, _u: f64, _x: &Point, _y: &Point) -> f64 {
        self.source.linear_u
    }

    fn source_mean(&self, u: f64, _x: &Point) -> Option<f64> {
        Some(self.source.constant + self.source.linear_u * u)
    }

    fn depends_on_u(&self) -> bool {
        match &self.kind {
            Resolved::Scaled { .. } | Resolved::Layered { .. } => false,
            Resolved::Rosseland { b, .. } => *b != tensor::ZERO,
            Resolved::Separated { mu_u2, .. } => *mu_u2 != 0.0,
        }
    }

    fn depends_on_x(&self) -> bool {
        match &self.kind {
            Resolved::Scaled { profile, .. } => profile.depends_on_x(),
            Resolved::Layered { .. } => false,
            Resolved::Rosseland { k, .. } => k.depends_on_x(),
            Resolved::Separated { mu_x, g, .. } => *mu_x != 0.0 || g.depends_on_x(),
        }
    }

    fn ellipticity(&self) -> [f64; 2] {
        self.ellipticity
    }

    fn is_cubic_in_u(&self) -> bool {
        matches!(self.kind, Resolved::Rosseland { .. }) && self.depends_on_u()
    }
}
