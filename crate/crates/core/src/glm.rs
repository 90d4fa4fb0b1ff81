//! Single-level logistic regression fit by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::DesignMatrices;
use crate::error::{Error, Result};
use crate::numeric::{bernoulli_logpmf, cholesky, cholesky_inverse, cholesky_solve, inv_logit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmSettings {
    /// Relative deviance change that ends the iteration.
    pub tolerance: f64,
    pub max_iter: usize,
    /// |coefficient| past which the fit is declared separated.
    pub separation_bound: f64,
}

impl Default for GlmSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 50,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Inverse observed information at the optimum.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    x * beta
}

/// Bernoulli log-likelihood of the logit model at `beta`.
pub fn log_likelihood(design: &DesignMatrices, beta: &[f64]) -> Result<f64> {
    check_width(design, beta.len())?;
    let eta = linear_predictor(&design.x, &DVector::from_column_slice(beta));
    Ok(design
        .y
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| bernoulli_logpmf(y, e))
        .sum())
}

/// Gradient of [`log_likelihood`]: `Xᵀ(y − p)`.
pub fn score(design: &DesignMatrices, beta: &[f64]) -> Result<Vec<f64>> {
    check_width(design, beta.len())?;
    let eta = linear_predictor(&design.x, &DVector::from_column_slice(beta));
    let resid = DVector::from_iterator(
        design.n(),
        design.y.iter().zip(eta.iter()).map(|(&y, &e)| y - inv_logit(e)),
    );
    Ok((design.x.transpose() * resid).as_slice().to_vec())
}

fn check_width(design: &DesignMatrices, p: usize) -> Result<()> {
    if design.p() != p {
        return Err(Error::DimensionMismatch {
            expected: design.p(),
            got: p,
        });
    }
    Ok(())
}

struct Working {
    deviance: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
}

fn working(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Working {
    let eta = linear_predictor(x, beta);
    let n = y.len();
    let mut resid = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut ll = 0.0;
    for i in 0..n {
        let mu = inv_logit(eta[i]);
        resid[i] = y[i] - mu;
        w[i] = mu * (1.0 - mu);
        ll += bernoulli_logpmf(y[i], eta[i]);
    }
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    Working {
        deviance: -2.0 * ll,
        gradient: x.transpose() * resid,
        information: x.transpose() * xw,
    }
}

/// Maximum-likelihood logistic regression by Newton/IRLS with step halving.
pub fn fit_glm(design: &DesignMatrices, settings: &GlmSettings) -> Result<GlmFit> {
    let p = design.p();
    let x = &design.x;
    let y = &design.y;
    let mut beta = DVector::zeros(p);
    let mut cur = working(x, y, &beta);
    let mut converged = false;
    let mut iterations = 0;

    // one extra iteration runs after the stopping rule fires
    while iterations < settings.max_iter {
        iterations += 1;
        let l = cholesky(&cur.information).ok_or(Error::SingularInformation)?;
        let step = cholesky_solve(&l, &cur.gradient);
        let mut scale = 1.0;
        let (next_beta, next) = loop {
            let cand = &beta + &step * scale;
            let w = working(x, y, &cand);
            // deviance flat at rounding level: follow the score
            let flat = w.deviance <= cur.deviance + 1e-12 * cur.deviance.abs().max(1.0)
                && w.gradient.amax() < cur.gradient.amax();
            if w.deviance <= cur.deviance || flat || scale < 1e-10 {
                break (cand, w);
            }
            scale *= 0.5;
        };
        let change = (cur.deviance - next.deviance).abs() / next.deviance.abs().max(1e-300);
        beta = next_beta;
        cur = next;
        if let Some(k) = (0..p).find(|&k| beta[k].abs() > settings.separation_bound) {
            return Err(Error::SeparationDetected {
                term: design.column_names[k].clone(),
                bound: settings.separation_bound,
            });
        }
        if converged {
            break;
        }
        converged = change < settings.tolerance;
    }

    let l = cholesky(&cur.information).ok_or(Error::SingularInformation)?;
    let cov = cholesky_inverse(&l);
    let std_errors = (0..p).map(|k| cov[(k, k)].sqrt()).collect();
    let log_likelihood = -0.5 * cur.deviance;
    Ok(GlmFit {
        column_names: design.column_names.clone(),
        coefficients: beta.as_slice().to_vec(),
        std_errors,
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        log_likelihood,
        deviance: -2.0 * log_likelihood,
        n_obs: design.n(),
        n_params: p,
        converged,
        iterations,
    })
}

/// Fitted probabilities `inverse-logit(X β̂)` for each row of `design`.
pub fn predict_glm(fit: &GlmFit, design: &DesignMatrices) -> Result<Vec<f64>> {
    check_width(design, fit.coefficients.len())?;
    let eta = linear_predictor(&design.x, &DVector::from_column_slice(&fit.coefficients));
    Ok(eta.iter().map(|&e| inv_logit(e)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn design(y: Vec<f64>, cols: &[Vec<f64>]) -> DesignMatrices {
        let n = y.len();
        let p = 1 + cols.len();
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let names = (0..p).map(|j| format!("c{j}")).collect();
        DesignMatrices::from_parts(y, x, names, vec![0; n], vec!["g".into()], vec![]).unwrap()
    }

    fn ones(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn intercept_only_closed_forms() {
        let fit = fit_glm(&design(ones(5, 20), &[]), &GlmSettings::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - (0.25f64 / 0.75).ln()).abs() < 1e-9);
        let fit = fit_glm(&design(ones(10, 20), &[]), &GlmSettings::default()).unwrap();
        assert!((fit.deviance - (-2.0 * 20.0 * 0.5f64.ln())).abs() < 1e-9);
        assert!((fit.deviance - 27.7259).abs() < 5e-5);
        assert_eq!(fit.deviance, -2.0 * fit.log_likelihood);
    }

    #[test]
    fn separation_is_detected() {
        let y = ones(6, 12);
        let d = design(y.clone(), &[y]);
        assert!(matches!(
            fit_glm(&d, &GlmSettings::default()),
            Err(Error::SeparationDetected { .. })
        ));
    }

    #[test]
    fn duplicate_column_is_singular() {
        let y = vec![1., 0., 1., 1., 0., 0., 1., 0.];
        let a = vec![1., 1., 0., 1., 0., 1., 0., 0.];
        let d = design(y, &[a.clone(), a]);
        assert!(matches!(
            fit_glm(&d, &GlmSettings::default()),
            Err(Error::SingularInformation)
        ));
    }

    #[test]
    fn predictions() {
        let d = design(ones(3, 6), &[]);
        let mut fit = fit_glm(&d, &GlmSettings::default()).unwrap();
        fit.coefficients = vec![0.0];
        assert!(predict_glm(&fit, &d).unwrap().iter().all(|&p| p == 0.5));
        fit.coefficients = vec![-0.7];
        let p = predict_glm(&fit, &d).unwrap();
        assert!((p[0] - 0.3318).abs() < 5e-5);
        let wide = design(ones(3, 6), &[ones(2, 6)]);
        assert!(matches!(
            predict_glm(&fit, &wide),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
