//! Error norms on fine grids, convergence-rate fitting and the 1-D
//! oscillatory antiderivative check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cell::HomogenizedTensor;
use crate::coefficients::Coefficient;
use crate::fem::{element_points, QuadratureRule};
use crate::grid::{Grid, MacroField, MacroGrid};
use crate::macro_solver::homogenized_energy;
use crate::tensor::{self, Point};
use crate::two_scale::{cells_per_period, fast_coordinate, fine_quadrature};
use crate::{Error, Result};

/// Closed axis-aligned box `[lo, hi]` inside the unit domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub lo: Point,
    pub hi: Point,
}

impl Default for Subdomain {
    fn default() -> Self {
        Self {
            lo: [0.25, 0.25],
            hi: [0.75, 0.75],
        }
    }
}

const SLACK: f64 = 1e-12;

impl Subdomain {
    pub fn new(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: &Point, dim: usize) -> bool {
        (0..dim).all(|d| x[d] >= self.lo[d] - SLACK && x[d] <= self.hi[d] + SLACK)
    }

    /// Interior estimates need a box at positive distance from the boundary.
    pub fn check_interior(&self, dim: usize) -> Result<()> {
        for d in 0..dim {
            if !(self.lo[d] > 0.0 && self.hi[d] < 1.0 && self.lo[d] < self.hi[d]) {
                return Err(Error::Analysis(format!(
                    "subdomain [{:?}, {:?}] must lie strictly inside the unit box",
                    self.lo, self.hi
                )));
            }
        }
        Ok(())
    }

    fn contains_element(&self, grid: &MacroGrid, e: usize) -> bool {
        let o = grid.element_origin(e);
        let h = grid.spacing();
        self.contains(&o, grid.dim()) && self.contains(&[o[0] + h, o[1] + h], grid.dim())
    }
}

/// Largest nodal absolute value, over the subdomain if given.
pub fn norm_linf(field: &MacroField, sub: Option<&Subdomain>) -> Result<f64> {
    let grid = *field.grid();
    let mut any = false;
    let mut m = 0.0f64;
    for (n, v) in field.values().iter().enumerate() {
        if sub.is_none_or(|s| s.contains(&grid.node_coords(n), grid.dim())) {
            any = true;
            m = m.max(v.abs());
        }
    }
    if !any {
        return Err(Error::Analysis("subdomain contains no nodes".into()));
    }
    Ok(m)
}

fn integrate<F>(field: &MacroField, integrand: F) -> f64
where
    F: Fn(f64, [f64; 2]) -> f64 + Sync,
{
    let grid = *field.grid();
    let quad = QuadratureRule::gauss(grid.dim(), 2).expect("two-point rule");
    let parts: Vec<f64> = (0..grid.element_count())
        .into_par_iter()
        .map(|e| {
            element_points(&grid, &quad, e)
                .map(|qp| qp.weight * integrand(field.eval_local(e, &qp.local), field.grad_local(e, &qp.local)))
                .sum()
        })
        .collect();
    parts.iter().sum()
}

/// `L2` norm of the Q1 interpolant.
pub fn norm_l2(field: &MacroField) -> f64 {
    integrate(field, |v, _| v * v).sqrt()
}

/// `H1` seminorm of the Q1 interpolant.
pub fn seminorm_h1(field: &MacroField) -> f64 {
    integrate(field, |_, g| g[0] * g[0] + g[1] * g[1]).sqrt()
}

/// Full `H1` norm.
pub fn norm_h1(field: &MacroField) -> f64 {
    integrate(field, |v, g| v * v + g[0] * g[0] + g[1] * g[1]).sqrt()
}

/// `|int A_eps grad u_eps . grad u_eps - int a0 grad u0 . grad u0|`, with
/// `A_eps` evaluated at `u_eps`.
pub fn energy_difference(
    model: &dyn Coefficient,
    u_eps: &MacroField,
    eps: f64,
    tensor: &HomogenizedTensor,
    u0: &MacroField,
) -> Result<f64> {
    let fine = *u_eps.grid();
    let dim = fine.dim();
    let p = cells_per_period(&fine, eps)?;
    let quad = fine_quadrature(model, dim, None)?;
    let parts: Vec<f64> = (0..fine.element_count())
        .into_par_iter()
        .map(|e| {
            element_points(&fine, &quad, e)
                .map(|qp| {
                    let u = model.clamp_u(u_eps.eval_local(e, &qp.local));
                    let a = model.a(u, &qp.x, &fast_coordinate(&qp, p, dim));
                    qp.weight * tensor::quad_form(&a, &u_eps.grad_local(e, &qp.local))
                })
                .sum()
        })
        .collect();
    let fine_energy: f64 = parts.iter().sum();
    let macro_quad = QuadratureRule::gauss(dim, if model.is_cubic_in_u() { 3 } else { 2 })?;
    let macro_energy = homogenized_energy(tensor, u0, &macro_quad);
    Ok((fine_energy - macro_energy).abs())
}

/// Flux context for [`interior_gradient_sup`]: the gradient is multiplied by
/// `A_eps(u_eps, x, x/eps)` at the element centre.
pub struct FluxContext<'a> {
    pub model: &'a dyn Coefficient,
    pub eps: f64,
    pub u_eps: &'a MacroField,
}

/// Largest elementwise gradient (or flux) magnitude over elements inside
/// the interior subdomain, evaluated at element centres.
pub fn interior_gradient_sup(field: &MacroField, sub: &Subdomain, flux: Option<&FluxContext<'_>>) -> Result<f64> {
    let grid = *field.grid();
    let dim = grid.dim();
    sub.check_interior(dim)?;
    let p = match flux {
        Some(f) => Some(cells_per_period(f.u_eps.grid(), f.eps)?),
        None => None,
    };
    let centre = [0.5, if dim == 2 { 0.5 } else { 0.0 }];
    let mut any = false;
    let mut best = 0.0f64;
    for e in 0..grid.element_count() {
        if !sub.contains_element(&grid, e) {
            continue;
        }
        any = true;
        let mut g = field.grad_local(e, &centre);
        if let (Some(f), Some(p)) = (flux, p) {
            let o = grid.element_origin(e);
            let h = grid.spacing();
            let x = [o[0] + centre[0] * h, o[1] + centre[1] * h];
            let qp = crate::fem::QuadPoint {
                element: e,
                cell: grid.element_index(e),
                index: 0,
                local: centre,
                x,
                weight: 0.0,
            };
            let u = f.model.clamp_u(f.u_eps.eval_local(e, &centre));
            let a = f.model.a(u, &x, &fast_coordinate(&qp, p, dim));
            g = tensor::mat_vec(&a, &g);
        }
        best = best.max(tensor::norm(&g));
    }
    if !any {
        return Err(Error::Analysis("subdomain contains no whole element".into()));
    }
    Ok(best)
}

/// Discrete Holder seminorm estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub value: f64,
    pub pairs: usize,
    /// Whether pairs were sampled rather than enumerated.
    pub sampled: bool,
    pub seed: u64,
}

/// Number of random pairs drawn in 2-D.
pub const HOLDER_RANDOM_PAIRS: usize = 100_000;

/// `max |u_p - u_q| / |x_p - x_q|^beta` over node pairs in the subdomain:
/// all pairs in 1-D; in 2-D all pairs within `4 h` plus seeded random pairs.
pub fn holder_seminorm(field: &MacroField, sub: &Subdomain, beta: f64, seed: u64) -> Result<HolderEstimate> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Analysis(format!("Holder exponent {beta} not in (0, 1)")));
    }
    let grid = *field.grid();
    let dim = grid.dim();
    sub.check_interior(dim)?;
    let nodes: Vec<usize> = (0..grid.node_count())
        .filter(|&n| sub.contains(&grid.node_coords(n), dim))
        .collect();
    if nodes.len() < 2 {
        return Err(Error::Analysis("fewer than two nodes in the subdomain".into()));
    }
    let v = field.values();
    let ratio = |a: usize, b: usize| {
        let xa = grid.node_coords(a);
        let xb = grid.node_coords(b);
        let d = tensor::norm(&[xa[0] - xb[0], xa[1] - xb[1]]);
        (v[a] - v[b]).abs() / d.powf(beta)
    };
    if dim == 1 {
        let best = (0..nodes.len())
            .into_par_iter()
            .map(|i| {
                ((i + 1)..nodes.len())
                    .map(|j| ratio(nodes[i], nodes[j]))
                    .fold(0.0, f64::max)
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max);
        let n = nodes.len();
        return Ok(HolderEstimate {
            value: best,
            pairs: n * (n - 1) / 2,
            sampled: false,
            seed,
        });
    }
    let r = 4i64;
    let stride = grid.cells_per_side() + 1;
    let near: Vec<(f64, usize)> = nodes
        .par_iter()
        .map(|&a| {
            let [i, j] = grid.node_index(a);
            let mut best = 0.0f64;
            let mut count = 0;
            for dj in -r..=r {
                for di in -r..=r {
                    if (dj, di) <= (0, 0) || di * di + dj * dj > r * r {
                        continue;
                    }
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii < 0 || jj < 0 || ii as usize >= stride || jj as usize >= stride {
                        continue;
                    }
                    let b = ii as usize + jj as usize * stride;
                    if sub.contains(&grid.node_coords(b), dim) {
                        best = best.max(ratio(a, b));
                        count += 1;
                    }
                }
            }
            (best, count)
        })
        .collect();
    let mut best = near.iter().fold(0.0f64, |m, p| m.max(p.0));
    let mut pairs: usize = near.iter().map(|p| p.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..HOLDER_RANDOM_PAIRS {
        let a = nodes[rng.gen_range(0..nodes.len())];
        let b = nodes[rng.gen_range(0..nodes.len())];
        if a != b {
            best = best.max(ratio(a, b));
            pairs += 1;
        }
    }
    Ok(HolderEstimate {
        value: best,
        pairs,
        sampled: true,
        seed,
    })
}

/// Least-squares fit of `log(error) = slope log(eps) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub slope_ci: [f64; 2],
    /// `log(e_i / e_{i+1}) / log(eps_i / eps_{i+1})` for consecutive pairs.
    pub pairwise: Vec<f64>,
    /// Pairs dropped for non-positive errors.
    pub excluded: usize,
}

pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(e, err)| e > 0.0 && err > 0.0 && err.is_finite())
        .collect();
    let excluded = pairs.len() - kept.len();
    if excluded > 0 {
        log::warn!("{excluded} pair(s) with non-positive error excluded from the rate fit");
    }
    if kept.len() < 3 {
        return Err(Error::Analysis(format!(
            "rate fit needs at least 3 positive errors, {} remain",
            kept.len()
        )));
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Analysis("rate fit needs distinct eps values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Analysis(e.to_string()))?
        .inverse_cdf(0.975);
    let pairwise = kept
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect();
    Ok(RateFit {
        slope,
        intercept,
        slope_ci: [slope - t * se, slope + t * se],
        pairwise,
        excluded,
    })
}

/// Result of the oscillatory antiderivative check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `(eps, ||psi_eps||_p)` rows.
    pub rows: Vec<(f64, f64)>,
    pub p: f64,
    /// `None` when every norm is below [`NOISE_FLOOR`].
    pub fit: Option<RateFit>,
}

/// For `g(x, y)` mean-zero and periodic in `y`, builds
/// `psi_eps(x) = int_0^x g(t, t/eps) dt` minus its mean on a grid with
/// `cells_per_period` cells per period and returns its `L^p` norms
/// (`p = inf` allowed) and their rate in `eps`.
pub fn antiderivative_lemma_1d<G>(g: G, eps_list: &[f64], p: f64, cells_per_period: usize) -> Result<LemmaReport>
where
    G: Fn(f64, f64) -> f64 + Sync,
{
    if !(p >= 1.0) {
        return Err(Error::Analysis(format!("exponent p = {p} must be at least 1")));
    }
    let quad = QuadratureRule::gauss(1, 5)?;
    let cell = MacroGrid::new(1, 256)?;
    for xs in [0.0, 0.3, 0.7, 1.0] {
        let mean: f64 = (0..cell.element_count())
            .flat_map(|e| element_points(&cell, &quad, e))
            .map(|qp| qp.weight * g(xs, qp.x[0]))
            .sum();
        if mean.abs() > 1e-10 {
            return Err(Error::Analysis(format!(
                "g must have zero cell mean; mean at x = {xs} is {mean:e}"
            )));
        }
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = crate::two_scale::fine_grid_for(1, eps, cells_per_period)?;
        let per = cells_per_period;
        let mut psi = vec![0.0; grid.node_count()];
        for e in 0..grid.element_count() {
            let inc: f64 = element_points(&grid, &quad, e)
                .map(|qp| qp.weight * g(qp.x[0], fast_coordinate(&qp, per, 1)[0]))
                .sum();
            psi[e + 1] = psi[e] + inc;
        }
        let field = MacroField::new(grid, psi)?;
        let mean = integrate(&field, |v, _| v);
        let centred: Vec<f64> = field.values().iter().map(|v| v - mean).collect();
        let centred = MacroField::new(grid, centred)?;
        let norm = if p.is_infinite() {
            norm_linf(&centred, None)?
        } else {
            let q = QuadratureRule::gauss(1, 5)?;
            let s: f64 = (0..grid.element_count())
                .flat_map(|e| element_points(&grid, &q, e))
                .map(|qp| qp.weight * centred.eval_local(qp.element, &qp.local).abs().powf(p))
                .sum();
            s.powf(1.0 / p)
        };
        rows.push((eps, norm));
    }
    let fit = if rows.iter().all(|r| r.1 < NOISE_FLOOR) {
        None
    } else {
        Some(fit_rate(&rows)?)
    };
    Ok(LemmaReport { rows, p, fit })
}

/// Error measures at one `eps`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorRow {
    pub eps: f64,
    /// `||u_eps - u0||_inf`.
    pub linf_order0: f64,
    /// `||u_eps - u0 - eps u1||_inf`.
    pub linf_order1: f64,
    /// `||u_eps - u~||_inf` with the second-order reconstruction.
    pub linf_order2: f64,
    /// `|E_eps - E_0|`.
    pub energy: f64,
    /// `||u_eps - u0 - eps u1||_H1`.
    pub h1_order1: f64,
    /// Interior sup of `|grad(u_eps - u0 - eps u1)|`.
    pub grad_interior: f64,
    /// Interior sup of `|A_eps grad(u_eps - u0 - eps u1)|`.
    pub flux_interior: f64,
    /// Interior Holder seminorm of the second-order remainder.
    pub holder: f64,
    /// Largest boundary value of the second-order remainder.
    pub boundary_max: f64,
    pub picard_fine: usize,
    pub picard_macro: usize,
}

/// Column names of [`ErrorRow`] measures that get a rate.
pub const RATE_COLUMNS: [&str; 8] = [
    "linf_order0",
    "linf_order1",
    "linf_order2",
    "energy",
    "h1_order1",
    "grad_interior",
    "flux_interior",
    "holder",
];

impl ErrorRow {
    pub fn column(&self, name: &str) -> Option<f64> {
        Some(match name {
            "linf_order0" => self.linf_order0,
            "linf_order1" => self.linf_order1,
            "linf_order2" => self.linf_order2,
            "energy" => self.energy,
            "h1_order1" => self.h1_order1,
            "grad_interior" => self.grad_interior,
            "flux_interior" => self.flux_interior,
            "holder" => self.holder,
            "boundary_max" => self.boundary_max,
            _ => return None,
        })
    }
}

/// Rate of one error column, or why none is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRate {
    pub column: String,
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

/// Rows sorted by decreasing `eps` with fitted rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub rates: Vec<ColumnRate>,
}

/// Errors below this are discretization noise and carry no rate.
pub const NOISE_FLOOR: f64 = 1e-9;

impl ErrorReport {
    pub fn from_rows(mut rows: Vec<ErrorRow>) -> Self {
        rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let rates = RATE_COLUMNS
            .iter()
            .map(|&c| {
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.column(c).unwrap_or(0.0))).collect();
                if pairs.iter().all(|p| p.1 < NOISE_FLOOR) {
                    return ColumnRate {
                        column: c.to_string(),
                        fit: None,
                        note: Some("not meaningful: all errors below the noise floor".into()),
                    };
                }
                match fit_rate(&pairs) {
                    Ok(fit) => ColumnRate {
                        column: c.to_string(),
                        fit: Some(fit),
                        note: None,
                    },
                    Err(e) => ColumnRate {
                        column: c.to_string(),
                        fit: None,
                        note: Some(e.to_string()),
                    },
                }
            })
            .collect();
        Self { rows, rates }
    }

    pub fn slope(&self, column: &str) -> Option<f64> {
        self.rates
            .iter()
            .find(|r| r.column == column)
            .and_then(|r| r.fit.as_ref())
            .map(|f| f.slope)
    }
}
