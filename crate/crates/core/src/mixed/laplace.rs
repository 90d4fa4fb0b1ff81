//! Laplace approximation to the two-level logistic marginal likelihood.
//!
//! Random effects are written `b_j = L u_j` with `u_j ~ N(0, I_q)`. For each
//! group the conditional mode of `u_j` is found by penalized IRLS (Newton on
//! the penalized log-likelihood), and the group's contribution is
//!
//! ```text
//! log p(y_j | û_j) − ½ û_jᵀ û_j − ½ log det(Λᵀ Z_jᵀ W_j Z_j Λ + I)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::datamodel::DesignMatrices;
use crate::numeric::{bernoulli_logpmf, cholesky, cholesky_inverse, cholesky_logdet, cholesky_solve, inv_logit};

/// Gradient max-norm below which a conditional mode counts as stationary.
pub const MODE_GRADIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    /// Relative penalized-deviance change that ends PIRLS.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
struct GroupData {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    y: Vec<f64>,
}

/// Per-group solution at fixed `(β, Λ)`.
#[derive(Debug, Clone)]
pub struct GroupMode {
    pub mode: DVector<f64>,
    /// Square roots of the diagonal of the inverse penalized information.
    pub conditional_sd: DVector<f64>,
    /// Max-norm of the penalized score at the returned mode.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub log_contribution: f64,
}

#[derive(Debug, Clone)]
pub struct LaplaceEval {
    pub log_likelihood: f64,
    pub groups: Vec<GroupMode>,
}

/// A design split into groups, ready for repeated Laplace evaluations.
#[derive(Debug, Clone)]
pub struct LaplaceProblem {
    groups: Vec<GroupData>,
    p: usize,
    q: usize,
    inner: InnerSettings,
}

impl LaplaceProblem {
    pub fn new(design: &DesignMatrices, inner: InnerSettings) -> Self {
        let p = design.p();
        let q = 1 + design.z_cols.len();
        let groups = design
            .rows_by_group()
            .into_iter()
            .map(|rows| {
                let nj = rows.len();
                let x = DMatrix::from_fn(nj, p, |r, c| design.x[(rows[r], c)]);
                let z = DMatrix::from_fn(nj, q, |r, c| {
                    if c == 0 {
                        1.0
                    } else {
                        design.x[(rows[r], design.z_cols[c - 1])]
                    }
                });
                let y = rows.iter().map(|&i| design.y[i]).collect();
                GroupData { x, z, y }
            })
            .collect();
        Self { groups, p, q, inner }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Evaluates the Laplace log-likelihood and all conditional modes.
    pub fn evaluate(&self, beta: &DVector<f64>, factor: &DMatrix<f64>) -> LaplaceEval {
        let groups: Vec<GroupMode> = self
            .groups
            .iter()
            .map(|g| self.solve_group(g, beta, factor))
            .collect();
        let log_likelihood = groups.iter().map(|g| g.log_contribution).sum();
        LaplaceEval {
            log_likelihood,
            groups,
        }
    }

    /// Laplace log-likelihood only.
    pub fn log_likelihood(&self, beta: &DVector<f64>, factor: &DMatrix<f64>) -> f64 {
        self.groups
            .iter()
            .map(|g| self.solve_group(g, beta, factor).log_contribution)
            .sum()
    }

    fn solve_group(&self, g: &GroupData, beta: &DVector<f64>, factor: &DMatrix<f64>) -> GroupMode {
        let q = self.q;
        let offset = &g.x * beta;
        let zl = &g.z * factor;
        let mut u = DVector::zeros(q);
        let mut state = PenalizedState::at(&zl, &offset, &g.y, &u);
        let mut iterations = 0;
        // one extra step past the stopping rule
        let mut finishing = false;
        while iterations < self.inner.max_iter && state.grad_norm() > 0.0 {
            iterations += 1;
            let step = match cholesky(&state.info) {
                Some(l) => cholesky_solve(&l, &state.grad),
                None => state.grad.clone(),
            };
            let mut scale = 1.0;
            let (next_u, next) = loop {
                let cand = &u + &step * scale;
                let s = PenalizedState::at(&zl, &offset, &g.y, &cand);
                // deviance flat at rounding level: follow the score
                let flat = s.pdev <= state.pdev + 1e-12 * state.pdev.abs().max(1.0)
                    && s.grad_norm() < state.grad_norm();
                if s.pdev <= state.pdev || flat || scale < 1e-12 {
                    break (cand, s);
                }
                scale *= 0.5;
            };
            let rel = (state.pdev - next.pdev).abs() / next.pdev.abs().max(1e-300);
            u = next_u;
            state = next;
            if finishing {
                break;
            }
            if rel < self.inner.tolerance && state.grad_norm() < MODE_GRADIENT_TOL {
                finishing = true;
            }
        }
        let (logdet, sd) = match cholesky(&state.info) {
            Some(l) => {
                let inv = cholesky_inverse(&l);
                (
                    cholesky_logdet(&l),
                    DVector::from_fn(q, |k, _| inv[(k, k)].sqrt()),
                )
            }
            None => (f64::INFINITY, DVector::from_element(q, f64::NAN)),
        };
        GroupMode {
            gradient_norm: state.grad_norm(),
            mode: u,
            conditional_sd: sd,
            iterations,
            log_contribution: -0.5 * state.pdev - 0.5 * logdet,
        }
    }
}

struct PenalizedState {
    /// −2 × (log-likelihood − ½ uᵀu)
    pdev: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

impl PenalizedState {
    fn at(zl: &DMatrix<f64>, offset: &DVector<f64>, y: &[f64], u: &DVector<f64>) -> Self {
        let q = u.len();
        let mut ll = 0.0;
        let mut grad = -u.clone();
        let mut info = DMatrix::identity(q, q);
        for (r, &yr) in y.iter().enumerate() {
            let zr = zl.row(r);
            let eta = offset[r] + zr.dot(&u.transpose());
            let mu = inv_logit(eta);
            let w = mu * (1.0 - mu);
            ll += bernoulli_logpmf(yr, eta);
            let resid = yr - mu;
            for a in 0..q {
                grad[a] += zr[a] * resid;
                let wa = w * zr[a];
                for b in 0..=a {
                    info[(a, b)] += wa * zr[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        Self {
            pdev: -2.0 * (ll - 0.5 * u.norm_squared()),
            grad,
            info,
        }
    }

    fn grad_norm(&self) -> f64 {
        self.grad.amax()
    }
}
