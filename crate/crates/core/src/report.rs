//! Serializable fit documents, coefficient tables and number formatting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datamodel::{encode_design, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::glm::{predict_glm, GlmFit};
use crate::mixed::{information_criteria, predict_mixed, FitStatistics, MixedFit, PredictionMode};

/// Formats with 6 significant digits, `%g` style.
pub fn fmt6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mant.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Rounds to 6 significant digits.
pub fn round6(v: f64) -> f64 {
    if v.is_finite() {
        fmt6(v).parse().unwrap_or(v)
    } else {
        v
    }
}

/// Two-sided Wald p-value against the standard normal.
pub fn wald_p_value(estimate: f64, std_error: f64) -> f64 {
    let z = estimate / std_error;
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * (1.0 - n.cdf(z.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    /// `*` when p < 0.05.
    pub stars: String,
}

impl CoefficientRow {
    fn new(term: &str, estimate: f64, std_error: f64) -> Self {
        let p = wald_p_value(estimate, std_error);
        Self {
            term: term.to_string(),
            estimate,
            std_error,
            z: estimate / std_error,
            p_value: p,
            stars: if p < 0.05 { "*".into() } else { String::new() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub term: String,
    pub variance: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBlock {
    pub log_likelihood: f64,
    pub deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// A fitted model of any kind, as stored in `fit_<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Glm { spec: ModelSpec, fit: GlmFit },
    Mixed { fit: MixedFit },
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        match self {
            FittedModel::Glm { spec, .. } => spec,
            FittedModel::Mixed { fit } => &fit.spec,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Glm { fit, .. } => fit.converged,
            FittedModel::Mixed { fit } => fit.converged,
        }
    }

    pub fn coefficients(&self) -> Vec<CoefficientRow> {
        let (names, est, se) = match self {
            FittedModel::Glm { fit, .. } => (&fit.column_names, &fit.coefficients, &fit.std_errors),
            FittedModel::Mixed { fit } => (&fit.column_names, &fit.fixed, &fit.fixed_std_errors),
        };
        names
            .iter()
            .zip(est.iter().zip(se))
            .map(|(n, (&e, &s))| CoefficientRow::new(n, e, s))
            .collect()
    }

    pub fn variance_components(&self) -> Vec<VarianceRow> {
        match self {
            FittedModel::Glm { .. } => Vec::new(),
            FittedModel::Mixed { fit } => {
                let vc = &fit.variance_components;
                vc.names
                    .iter()
                    .zip(vc.variances.iter().zip(&vc.std_devs))
                    .map(|(n, (&v, &s))| VarianceRow {
                        term: n.clone(),
                        variance: v,
                        std_dev: s,
                    })
                    .collect()
            }
        }
    }

    pub fn fit_block(&self) -> FitBlock {
        let (stats, iterations): (&dyn FitStatistics, usize) = match self {
            FittedModel::Glm { fit, .. } => (fit, fit.iterations),
            FittedModel::Mixed { fit } => (fit, fit.outer_iterations),
        };
        let ic = information_criteria(stats);
        FitBlock {
            log_likelihood: stats.log_likelihood(),
            deviance: stats.deviance(),
            aic: ic.aic,
            bic: ic.bic,
            n_obs: stats.n_obs(),
            n_params: stats.n_params(),
            converged: self.converged(),
            iterations,
        }
    }

    /// Predicted probabilities on `dataset`, encoded with this model's spec.
    pub fn predict(&self, dataset: &Dataset, mode: PredictionMode) -> Result<Vec<f64>> {
        let design = encode_design(dataset, self.spec())?;
        match self {
            FittedModel::Glm { fit, .. } => predict_glm(fit, &design),
            FittedModel::Mixed { fit } => predict_mixed(fit, &design, mode),
        }
    }

    pub fn to_document(&self, name: &str) -> FitDocument {
        let conditional_modes = match self {
            FittedModel::Glm { .. } => Vec::new(),
            FittedModel::Mixed { fit } => fit
                .group_labels
                .iter()
                .zip(fit.random_effects())
                .zip(fit.conditional_modes.iter().zip(&fit.conditional_sds))
                .map(|((g, effect), (mode, sd))| ModeRow {
                    road_id: g.clone(),
                    effect,
                    mode: mode.clone(),
                    conditional_sd: sd.clone(),
                })
                .collect(),
        };
        let (icc, boundary) = match self {
            FittedModel::Glm { .. } => (None, Vec::new()),
            FittedModel::Mixed { fit } => (Some(fit.icc()), fit.boundary.clone()),
        };
        FitDocument {
            model: name.to_string(),
            fixed_effects: self.coefficients(),
            random_effects: self.variance_components(),
            icc,
            boundary,
            conditional_modes,
            fit: self.fit_block(),
            raw: self.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub road_id: String,
    /// Random effects on the coefficient scale, `L û_j`.
    pub effect: Vec<f64>,
    pub mode: Vec<f64>,
    pub conditional_sd: Vec<f64>,
}

/// JSON layout of `fit_<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub model: String,
    pub fixed_effects: Vec<CoefficientRow>,
    pub random_effects: Vec<VarianceRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub icc: Option<f64>,
    #[serde(default)]
    pub boundary: Vec<String>,
    pub conditional_modes: Vec<ModeRow>,
    pub fit: FitBlock,
    /// Full-precision fit, sufficient to predict and simulate.
    pub raw: FittedModel,
}

impl FitDocument {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}
