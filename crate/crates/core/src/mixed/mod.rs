//! Two-level logistic models fit by Laplace-approximated maximum likelihood.
//!
//! The random-effect covariance is `Σ = L Lᵀ` with `L` lower triangular
//! (intercept first, then the random slopes in spec order). The outer loop
//! runs BFGS jointly over `(β, θ)` with finite-difference gradients, where
//! `θ` holds the free entries of `L`, then refines with a few Newton steps
//! on a finite-difference Hessian. The likelihood depends on `L` only
//! through `Σ`, so `θ` is left unconstrained during the search and the sign
//! of each column is fixed afterwards so that `diag(L) ≥ 0`.

pub mod laplace;
pub mod optim;

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::{encode_design, Dataset, DesignMatrices, ModelSpec};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, GlmFit, GlmSettings};
use crate::numeric::{cholesky, cholesky_inverse, inv_logit};

pub use laplace::{InnerSettings, LaplaceProblem};

/// Level-1 variance of the standard logistic distribution, π²/3.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;

/// Diagonal entries of `L` below this are snapped to exactly zero.
pub const BOUNDARY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceStructure {
    /// Independent random effects.
    #[default]
    Diagonal,
    /// Fully parameterized lower-triangular factor.
    Full,
}

impl CovarianceStructure {
    pub fn n_theta(self, q: usize) -> usize {
        match self {
            CovarianceStructure::Diagonal => q,
            CovarianceStructure::Full => q * (q + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedSettings {
    pub covariance: CovarianceStructure,
    /// Outer relative log-likelihood change.
    pub outer_tolerance: f64,
    /// Outer max parameter change.
    pub parameter_tolerance: f64,
    pub outer_max_iter: usize,
    pub inner_tolerance: f64,
    pub inner_max_iter: usize,
    /// Starting value for the diagonal of `L`.
    pub theta_start: f64,
}

impl Default for MixedSettings {
    fn default() -> Self {
        Self {
            covariance: CovarianceStructure::Diagonal,
            outer_tolerance: 1e-7,
            parameter_tolerance: 1e-6,
            outer_max_iter: 500,
            inner_tolerance: 1e-9,
            inner_max_iter: 100,
            theta_start: 0.5,
        }
    }
}

impl MixedSettings {
    fn inner(&self) -> InnerSettings {
        InnerSettings {
            tolerance: self.inner_tolerance,
            max_iter: self.inner_max_iter,
        }
    }
}

/// Cholesky-style parameterization of the random-effect covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    pub structure: CovarianceStructure,
    /// Free entries of `L`: the diagonal, or the lower triangle column by column.
    pub theta: Vec<f64>,
    pub q: usize,
}

impl CovarianceParams {
    pub fn new(structure: CovarianceStructure, q: usize, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), structure.n_theta(q));
        Self {
            structure,
            theta,
            q,
        }
    }

    pub fn factor(&self) -> DMatrix<f64> {
        factor_from(self.structure, self.q, &self.theta)
    }

    /// `Σ = L Lᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.factor();
        &l * l.transpose()
    }

    /// Positions within `theta` that sit on the diagonal of `L`.
    pub fn diagonal_positions(structure: CovarianceStructure, q: usize) -> Vec<usize> {
        match structure {
            CovarianceStructure::Diagonal => (0..q).collect(),
            CovarianceStructure::Full => {
                let mut pos = Vec::with_capacity(q);
                let mut k = 0;
                for j in 0..q {
                    pos.push(k);
                    k += q - j;
                }
                pos
            }
        }
    }
}

fn factor_from(structure: CovarianceStructure, q: usize, theta: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    match structure {
        CovarianceStructure::Diagonal => {
            for k in 0..q {
                l[(k, k)] = theta[k];
            }
        }
        CovarianceStructure::Full => {
            let mut k = 0;
            for j in 0..q {
                for i in j..q {
                    l[(i, j)] = theta[k];
                    k += 1;
                }
            }
        }
    }
    l
}

/// Flips columns of `L` with a negative diagonal (Σ is unchanged) and
/// snaps tiny diagonals to zero. Returns the names of boundary components.
fn canonicalize(structure: CovarianceStructure, q: usize, theta: &mut [f64]) -> Vec<usize> {
    let diag = CovarianceParams::diagonal_positions(structure, q);
    let mut boundary = Vec::new();
    for (j, &d) in diag.iter().enumerate() {
        let len = match structure {
            CovarianceStructure::Diagonal => 1,
            CovarianceStructure::Full => q - j,
        };
        if theta[d] < 0.0 {
            for v in &mut theta[d..d + len] {
                *v = -*v;
            }
        }
        if theta[d] < BOUNDARY_FLOOR {
            theta[d] = 0.0;
            boundary.push(j);
        }
    }
    boundary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub names: Vec<String>,
    pub variances: Vec<f64>,
    pub std_devs: Vec<f64>,
    /// q × q correlation matrix (identity off-diagonals for the diagonal structure).
    pub correlations: Vec<Vec<f64>>,
}

impl VarianceComponents {
    fn from_covariance(names: Vec<String>, sigma: &DMatrix<f64>) -> Self {
        let q = sigma.nrows();
        let variances: Vec<f64> = (0..q).map(|k| sigma[(k, k)]).collect();
        let std_devs: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
        let correlations = (0..q)
            .map(|a| {
                (0..q)
                    .map(|b| {
                        if a == b {
                            1.0
                        } else if std_devs[a] > 0.0 && std_devs[b] > 0.0 {
                            sigma[(a, b)] / (std_devs[a] * std_devs[b])
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            names,
            variances,
            std_devs,
            correlations,
        }
    }
}

/// A fitted random-intercept or random-coefficient logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub spec: ModelSpec,
    pub column_names: Vec<String>,
    pub random_names: Vec<String>,
    /// Road id of each row of `conditional_modes`.
    pub group_labels: Vec<String>,
    pub fixed: Vec<f64>,
    pub fixed_std_errors: Vec<f64>,
    /// Wald covariance of `fixed` with `θ` held at its estimate.
    pub fixed_covariance: Vec<Vec<f64>>,
    pub cov: CovarianceParams,
    pub variance_components: VarianceComponents,
    /// J × q spherical modes `û_j`; the random effects are `L û_j`.
    pub conditional_modes: Vec<Vec<f64>>,
    pub conditional_sds: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub n_params: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Random-effect components whose standard deviation pinned at zero.
    pub boundary: Vec<String>,
}

impl MixedFit {
    pub fn factor(&self) -> DMatrix<f64> {
        self.cov.factor()
    }

    /// Random effects on the coefficient scale, `b_j = L û_j`, one row per group.
    pub fn random_effects(&self) -> Vec<Vec<f64>> {
        let l = self.factor();
        self.conditional_modes
            .iter()
            .map(|u| (&l * DVector::from_column_slice(u)).as_slice().to_vec())
            .collect()
    }

    /// Estimated random-intercept variance σ₀².
    pub fn intercept_variance(&self) -> f64 {
        self.variance_components.variances[0]
    }

    /// ICC from the random-intercept variance.
    pub fn icc(&self) -> f64 {
        icc(self.intercept_variance()).expect("variances are nonnegative")
    }
}

/// Deviance-based fit summaries shared by all model kinds.
pub trait FitStatistics {
    fn log_likelihood(&self) -> f64;
    fn n_params(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn deviance(&self) -> f64 {
        -2.0 * self.log_likelihood()
    }
}

impl FitStatistics for MixedFit {
    fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_obs(&self) -> usize {
        self.n_obs
    }
}

impl FitStatistics for GlmFit {
    fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_obs(&self) -> usize {
        self.n_obs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
}

/// AIC = deviance + 2k, BIC = deviance + k ln n.
pub fn information_criteria(fit: &(impl FitStatistics + ?Sized)) -> InformationCriteria {
    let dev = fit.deviance();
    let k = fit.n_params() as f64;
    InformationCriteria {
        aic: dev + 2.0 * k,
        bic: dev + k * (fit.n_obs() as f64).ln(),
    }
}

/// Intra-class correlation on the latent scale: σ₀² / (σ₀² + π²/3).
pub fn icc(sigma0_sq: f64) -> Result<f64> {
    if sigma0_sq.is_nan() || sigma0_sq < 0.0 {
        return Err(Error::NegativeVariance(sigma0_sq));
    }
    Ok(sigma0_sq / (sigma0_sq + LOGISTIC_VARIANCE))
}

/// Null model: intercept-only fixed part plus a random road intercept.
pub fn fit_null(dataset: &Dataset, settings: &MixedSettings) -> Result<MixedFit> {
    let spec = ModelSpec::null();
    let design = encode_design(dataset, &spec)?;
    fit_mixed(&design, &spec, settings)
}

fn glm_start(design: &DesignMatrices) -> DVector<f64> {
    match fit_glm(design, &GlmSettings::default()) {
        Ok(fit) => DVector::from_vec(fit.coefficients),
        Err(_) => {
            let mean = design.y.iter().sum::<f64>() / design.n() as f64;
            let mut b = DVector::zeros(design.p());
            b[0] = (mean / (1.0 - mean)).ln();
            b
        }
    }
}

/// Laplace maximum-likelihood fit of a two-level logistic model.
///
/// Fits that hit the outer iteration cap are returned with
/// `converged = false` rather than as an error.
pub fn fit_mixed(
    design: &DesignMatrices,
    spec: &ModelSpec,
    settings: &MixedSettings,
) -> Result<MixedFit> {
    spec.validate()?;
    if !spec.random_intercept {
        return Err(Error::InvalidSpec(
            "multilevel fit requires a random intercept".into(),
        ));
    }
    if design.p() != 1 + spec.fixed_terms.len() {
        return Err(Error::DimensionMismatch {
            expected: 1 + spec.fixed_terms.len(),
            got: design.p(),
        });
    }
    if design.z_cols.len() != spec.random_slope_terms.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.random_slope_terms.len(),
            got: design.z_cols.len(),
        });
    }
    let populated = design
        .rows_by_group()
        .iter()
        .filter(|rows| !rows.is_empty())
        .count();
    if populated < 2 {
        return Err(Error::InsufficientGroups(populated));
    }
    let positives = design.y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == design.n() {
        return Err(Error::OneClassOnly);
    }

    let problem = LaplaceProblem::new(design, settings.inner());
    let p = problem.p();
    let q = problem.q();
    let structure = settings.covariance;
    let n_theta = structure.n_theta(q);
    let diag_pos = CovarianceParams::diagonal_positions(structure, q);

    let objective = |params: &DVector<f64>| -> f64 {
        let beta = params.rows(0, p).into_owned();
        let l = factor_from(structure, q, &params.as_slice()[p..]);
        -problem.log_likelihood(&beta, &l)
    };

    let mut x0 = DVector::zeros(p + n_theta);
    x0.rows_mut(0, p).copy_from(&glm_start(design));
    for &d in &diag_pos {
        x0[p + d] = settings.theta_start;
    }

    let min = optim::bfgs(
        &objective,
        x0,
        &optim::BfgsSettings {
            rel_tol: settings.outer_tolerance,
            step_tol: settings.parameter_tolerance,
            max_iter: settings.outer_max_iter,
        },
    );
    let converged = min.converged;
    let mut x = min.x;
    let mut fx = min.value;
    let mut outer_iterations = min.iterations;

    canonicalize(structure, q, &mut x.as_mut_slice()[p..]);
    fx = fx.min(objective(&x));

    if converged {
        let pinned: Vec<usize> = diag_pos
            .iter()
            .map(|&d| p + d)
            .filter(|&k| x[k] == 0.0)
            .collect();
        let free: Vec<usize> = (0..p + n_theta).filter(|k| !pinned.contains(k)).collect();
        let h = optim::hessian(&objective, &x, &free);
        let mut steps = optim::newton_polish(&objective, &mut x, &mut fx, &h, &free, 8);
        if steps == 0 {
            // Near-boundary variance directions can make the joint Hessian
            // indefinite; refine β alone in that case.
            let beta_idx: Vec<usize> = (0..p).collect();
            let hb = optim::hessian(&objective, &x, &beta_idx);
            steps = optim::newton_polish(&objective, &mut x, &mut fx, &hb, &beta_idx, 8);
        }
        outer_iterations += steps;
    }

    let mut theta = x.as_slice()[p..].to_vec();
    let boundary_idx = canonicalize(structure, q, &mut theta);
    let beta = x.rows(0, p).into_owned();
    x.as_mut_slice()[p..].copy_from_slice(&theta);

    let beta_idx: Vec<usize> = (0..p).collect();
    let info = optim::hessian(&objective, &x, &beta_idx);
    let fixed_cov = cholesky(&info)
        .map(|l| cholesky_inverse(&l))
        .ok_or(Error::SingularInformation)?;

    let cov = CovarianceParams::new(structure, q, theta);
    let l = cov.factor();
    let eval = problem.evaluate(&beta, &l);
    let random_names = spec.random_names();
    let variance_components = VarianceComponents::from_covariance(random_names.clone(), &(&l * l.transpose()));
    let log_likelihood = eval.log_likelihood;

    Ok(MixedFit {
        spec: spec.clone(),
        column_names: design.column_names.clone(),
        boundary: boundary_idx.iter().map(|&j| random_names[j].clone()).collect(),
        random_names,
        group_labels: design.group_labels.clone(),
        fixed: beta.as_slice().to_vec(),
        fixed_std_errors: (0..p).map(|k| fixed_cov[(k, k)].sqrt()).collect(),
        fixed_covariance: fixed_cov
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        cov,
        variance_components,
        conditional_modes: eval
            .groups
            .iter()
            .map(|g| g.mode.as_slice().to_vec())
            .collect(),
        conditional_sds: eval
            .groups
            .iter()
            .map(|g| g.conditional_sd.as_slice().to_vec())
            .collect(),
        log_likelihood,
        deviance: -2.0 * log_likelihood,
        n_obs: design.n(),
        n_groups: design.n_groups(),
        n_params: p + n_theta,
        converged,
        outer_iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Use each road's conditional mode (zero for roads unseen in training).
    #[default]
    Conditional,
    /// Population-average linear predictor, random effects set to zero.
    Marginal,
}

/// Predicted probabilities for each row of `design`.
///
/// Rows are matched to fitted groups by road id, not by ordinal, so a
/// design encoded from a different dataset sharing the road table works.
pub fn predict_mixed(fit: &MixedFit, design: &DesignMatrices, mode: PredictionMode) -> Result<Vec<f64>> {
    if design.p() != fit.fixed.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.fixed.len(),
            got: design.p(),
        });
    }
    let q = fit.cov.q;
    if design.z_cols.len() + 1 != q {
        return Err(Error::DimensionMismatch {
            expected: q - 1,
            got: design.z_cols.len(),
        });
    }
    let beta = DVector::from_column_slice(&fit.fixed);
    let eta_fixed = &design.x * &beta;
    if mode == PredictionMode::Marginal {
        return Ok(eta_fixed.iter().map(|&e| inv_logit(e)).collect());
    }
    let by_label: HashMap<&str, usize> = fit
        .group_labels
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let effects = fit.random_effects();
    let lookup: Vec<Option<&Vec<f64>>> = design
        .group_labels
        .iter()
        .map(|g| by_label.get(g.as_str()).map(|&i| &effects[i]))
        .collect();
    Ok((0..design.n())
        .map(|i| {
            let re = match lookup[design.group_index[i]] {
                Some(b) => design.z_row(i).zip(b).map(|(z, b)| z * b).sum(),
                None => 0.0,
            };
            inv_logit(eta_fixed[i] + re)
        })
        .collect())
}
