//! Adaptive Gauss–Hermite evaluation of the random-intercept marginal
//! likelihood, used to audit Laplace fits on small problems.
//!
//! This module deliberately shares no code with the Laplace estimator
//! beyond the design matrices: its own mode finder, its own quadrature.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::datamodel::DesignMatrices;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 101;

/// Gauss–Hermite nodes and weights for the weight function `exp(−x²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal Hermite values φ_0..φ_{m-1} at x, plus φ_m.
fn orthonormal_hermite(x: f64, m: usize) -> (Vec<f64>, f64) {
    let mut vals = Vec::with_capacity(m);
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for j in 0..m {
        vals.push(cur);
        let next = x * (2.0 / (j as f64 + 1.0)).sqrt() * cur - (j as f64 / (j as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (vals, cur)
}

/// Golub–Welsch nodes, polished by Newton on the orthonormal recurrence,
/// with weights from the Christoffel function `1 / Σ_j φ_j(x)²`.
pub fn ghq_rule(m: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&m) {
        return Err(Error::UnsupportedOrder(m));
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            // φ_m'(x) = sqrt(2m) φ_{m-1}(x)
            let (vals, pm) = orthonormal_hermite(*x, m);
            let dpm = (2.0 * m as f64).sqrt() * vals[m - 1];
            if dpm == 0.0 {
                break;
            }
            let dx = pm / dpm;
            *x -= dx;
            if dx.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // exact symmetry
    for i in 0..m / 2 {
        let v = 0.5 * (nodes[m - 1 - i] - nodes[i]);
        nodes[i] = -v;
        nodes[m - 1 - i] = v;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let (vals, _) = orthonormal_hermite(x, m);
            1.0 / vals.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    Ok(QuadratureRule { nodes, weights })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the group integrand at standard-normal u, without the 1/√(2π).
fn group_log_integrand(offsets: &[f64], ys: &[f64], sigma: f64, u: f64) -> f64 {
    offsets
        .iter()
        .zip(ys)
        .map(|(&o, &y)| {
            let eta = o + sigma * u;
            y * eta - log1pexp(eta)
        })
        .sum::<f64>()
        - 0.5 * u * u
}

/// Mode and curvature of the group integrand in u.
fn group_mode(offsets: &[f64], ys: &[f64], sigma: f64) -> (f64, f64) {
    let derivs = |u: f64| {
        let mut g = -u;
        let mut h = 1.0;
        for (&o, &y) in offsets.iter().zip(ys) {
            let p = 1.0 / (1.0 + (-(o + sigma * u)).exp());
            g += sigma * (y - p);
            h += sigma * sigma * p * (1.0 - p);
        }
        (g, h)
    };
    let mut u = 0.0;
    for _ in 0..200 {
        let (g, h) = derivs(u);
        let step = (g / h).clamp(-4.0, 4.0);
        u += step;
        if step.abs() < 1e-14 * u.abs().max(1.0) {
            break;
        }
    }
    let (_, h) = derivs(u);
    (u, h)
}

/// Random-intercept marginal log-likelihood by (adaptive) Gauss–Hermite quadrature.
///
/// With `adaptive`, each group's integral is recentred at its mode and
/// scaled by the inverse root curvature before applying the rule.
pub fn ghq_loglik(
    design: &DesignMatrices,
    beta: &[f64],
    sigma0: f64,
    m: usize,
    adaptive: bool,
) -> Result<f64> {
    if beta.len() != design.p() {
        return Err(Error::DimensionMismatch {
            expected: design.p(),
            got: beta.len(),
        });
    }
    if !design.z_cols.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 0,
            got: design.z_cols.len(),
        });
    }
    if sigma0.is_nan() || sigma0 < 0.0 {
        return Err(Error::NegativeVariance(sigma0));
    }
    let rule = ghq_rule(m)?;
    let mut offsets = vec![Vec::new(); design.n_groups()];
    let mut ys = vec![Vec::new(); design.n_groups()];
    for i in 0..design.n() {
        let eta: f64 = (0..design.p()).map(|k| design.x[(i, k)] * beta[k]).sum();
        offsets[design.group_index[i]].push(eta);
        ys[design.group_index[i]].push(design.y[i]);
    }
    let log_norm = -0.5 * (2.0 * PI).ln();
    let mut total = 0.0;
    let mut terms = vec![0.0; m];
    for (off, y) in offsets.iter().zip(&ys) {
        if off.is_empty() {
            continue;
        }
        let (center, scale) = if adaptive {
            let (mode, curv) = group_mode(off, y, sigma0);
            (mode, 1.0 / curv.sqrt())
        } else {
            (0.0, 1.0)
        };
        // ∫ f(u) du = √2 s Σ w_k exp(x_k²) f(c + √2 s x_k)
        for (k, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let u = center + std::f64::consts::SQRT_2 * scale * x;
            terms[k] = w.ln() + x * x + group_log_integrand(off, y, sigma0, u);
        }
        total += log_sum_exp(&terms) + (std::f64::consts::SQRT_2 * scale).ln() + log_norm;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub beta0: f64,
    pub sigma0: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
    pub center: GridPoint,
    /// True when the grid maximum lies within one cell of the fitted point.
    pub fitted_is_optimal: bool,
}

impl GridReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "beta0,sigma0,loglik").map_err(io)?;
        for p in &self.points {
            writeln!(f, "{},{},{}", p.beta0, p.sigma0, p.loglik).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Evaluates the adaptive 25-node quadrature likelihood on a
/// `steps × steps` grid of (intercept, σ₀) around the fitted values, other
/// coefficients held fixed. Negative σ₀ grid values are clamped to zero.
pub fn grid_refit_check(
    design: &DesignMatrices,
    beta_hat: &[f64],
    sigma0_hat: f64,
    radius: f64,
    steps: usize,
) -> Result<GridReport> {
    let steps = steps.max(1);
    let half = (steps - 1) as f64 / 2.0;
    let offset = |k: usize| {
        if steps == 1 {
            0.0
        } else {
            radius * (k as f64 - half) / half
        }
    };
    let mut points = Vec::with_capacity(steps * steps);
    let mut beta = beta_hat.to_vec();
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for a in 0..steps {
        beta[0] = beta_hat[0] + offset(a);
        for b in 0..steps {
            let s = (sigma0_hat + offset(b)).max(0.0);
            let ll = ghq_loglik(design, &beta, s, 25, true)?;
            if ll > best.2 {
                best = (a, b, ll);
            }
            points.push(GridPoint {
                beta0: beta[0],
                sigma0: s,
                loglik: ll,
            });
        }
    }
    let mid = (steps - 1) / 2;
    let center = points[mid * steps + mid].clone();
    let best_pt = points[best.0 * steps + best.1].clone();
    let fitted_is_optimal = best.0.abs_diff(mid) <= 1 && best.1.abs_diff(mid) <= 1;
    Ok(GridReport {
        points,
        best: best_pt,
        center,
        fitted_is_optimal,
    })
}
