//! Two-level logistic modeling of road-nested crash severity data.
//!
//! Single-level, random-intercept and random-coefficient logistic models,
//! fit by maximum likelihood with a Laplace approximation; intra-class
//! correlation; deviance-based comparison; coefficient simulation; and
//! held-out classification evaluation.

pub mod datamodel;
pub mod error;
pub mod eval;
pub mod glm;
pub mod mixed;
mod numeric;
pub mod oracle;
pub mod report;
pub mod simgen;

pub use datamodel::{
    encode_design, load_dataset, split, write_dataset, CrashRecord, Dataset, DesignMatrices,
    ModelSpec, RoadProfile, Term,
};
pub use error::{Error, Result};
pub use glm::{fit_glm, predict_glm, GlmFit, GlmSettings};
pub use mixed::{
    fit_mixed, fit_null, icc, information_criteria, predict_mixed, CovarianceStructure,
    FitStatistics, MixedFit, MixedSettings, PredictionMode,
};
pub use numeric::inv_logit;
pub use report::{FitDocument, FittedModel};
