//! Held-out classification metrics, ROC curves, AUC and model comparison.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::mixed::PredictionMode;
use crate::report::{fmt6, round6, CoefficientRow, FitBlock, FittedModel, VarianceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Counts with "positive iff score ≥ threshold".
pub fn confusion(labels: &[bool], scores: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(labels, scores)?;
    let mut c = ConfusionCounts::default();
    for (&y, &s) in labels.iter().zip(scores) {
        match (y, s >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ratio metrics; `None` marks a 0/0 case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    /// Names of the metrics that are undefined for these counts.
    pub fn undefined(&self) -> Vec<&'static str> {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| n)
        .collect()
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn metrics(counts: &ConfusionCounts) -> Metrics {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Metrics {
        accuracy: ratio(counts.tp + counts.tn, counts.total()),
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::OneClassOnly);
    }
    Ok((pos, neg))
}

/// ROC points from sweeping the threshold down through the distinct scores,
/// starting at (0, 0) and ending at (1, 1). Tied scores form one step.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    check_inputs(labels, scores)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mann–Whitney AUC: share of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives, kept doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j, midrank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// How the classification cutoff is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule {
    Fixed(f64),
    /// Cutoff at the k-th largest score, k = number of positive labels.
    PrevalenceMatched,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Fixed(0.5)
    }
}

impl ThresholdRule {
    pub fn resolve(&self, labels: &[bool], scores: &[f64]) -> f64 {
        match *self {
            ThresholdRule::Fixed(t) => t,
            ThresholdRule::PrevalenceMatched => {
                let k = labels.iter().filter(|&&y| y).count();
                if k == 0 {
                    return f64::INFINITY;
                }
                let mut s = scores.to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                s[k - 1]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub undefined: Vec<String>,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub threshold: f64,
}

pub fn evaluate(labels: &[bool], scores: &[f64], rule: ThresholdRule) -> Result<EvalReport> {
    let threshold = rule.resolve(labels, scores);
    let counts = confusion(labels, scores, threshold)?;
    let m = metrics(&counts);
    Ok(EvalReport {
        counts,
        undefined: m.undefined().into_iter().map(String::from).collect(),
        metrics: m,
        roc: roc_curve(labels, scores)?,
        auc: auc(labels, scores)?,
        threshold,
    })
}

impl EvalReport {
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for p in &self.roc {
            out.push_str(&format!("{},{}\n", fmt6(p.fpr), fmt6(p.tpr)));
        }
        out
    }
}

/// One model's column in the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub fixed_effects: Vec<CoefficientRow>,
    pub random_effects: Vec<VarianceRow>,
    pub fit: FitBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub model: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: f64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub prediction: PredictionMode,
    pub threshold_rule: ThresholdRule,
    pub fit_summary: Vec<ModelSummary>,
    pub classification: Vec<ClassificationRow>,
    #[serde(skip)]
    pub roc: Vec<(String, Vec<RocPoint>)>,
}

fn round_opt(v: Option<f64>) -> Option<f64> {
    v.map(round6)
}

/// Evaluates every fit on `test` and assembles the coefficient/fit table
/// and the classification table. Numbers are rounded to 6 significant digits.
pub fn compare_models(
    fits: &[(String, FittedModel)],
    test: &Dataset,
    prediction: PredictionMode,
    rule: ThresholdRule,
) -> Result<ComparisonReport> {
    if fits.is_empty() {
        return Err(Error::EmptyComparison);
    }
    let labels: Vec<bool> = test.records().iter().map(|r| r.severity).collect();
    let mut fit_summary = Vec::new();
    let mut classification = Vec::new();
    let mut roc = Vec::new();
    for (name, model) in fits {
        let scores = model.predict(test, prediction)?;
        let ev = evaluate(&labels, &scores, rule)?;
        let fit = model.fit_block();
        fit_summary.push(ModelSummary {
            model: name.clone(),
            fixed_effects: model
                .coefficients()
                .into_iter()
                .map(|c| CoefficientRow {
                    estimate: round6(c.estimate),
                    std_error: round6(c.std_error),
                    z: round6(c.z),
                    p_value: round6(c.p_value),
                    ..c
                })
                .collect(),
            random_effects: model
                .variance_components()
                .into_iter()
                .map(|v| VarianceRow {
                    variance: round6(v.variance),
                    std_dev: round6(v.std_dev),
                    ..v
                })
                .collect(),
            fit: FitBlock {
                log_likelihood: round6(fit.log_likelihood),
                deviance: round6(fit.deviance),
                aic: round6(fit.aic),
                bic: round6(fit.bic),
                ..fit
            },
        });
        classification.push(ClassificationRow {
            model: name.clone(),
            accuracy: round_opt(ev.metrics.accuracy),
            precision: round_opt(ev.metrics.precision),
            recall: round_opt(ev.metrics.recall),
            f1: round_opt(ev.metrics.f1),
            auc: round6(ev.auc),
            threshold: round6(ev.threshold),
            counts: ev.counts,
            undefined: ev.undefined.clone(),
        });
        roc.push((name.clone(), ev.roc));
    }
    Ok(ComparisonReport {
        prediction,
        threshold_rule: rule,
        fit_summary,
        classification,
        roc,
    })
}

fn opt6(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_else(|| "NA".into())
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("model,accuracy,precision,recall,f1,auc,threshold,tp,fp,tn,fn\n");
        for r in &self.classification {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                opt6(r.accuracy),
                opt6(r.precision),
                opt6(r.recall),
                opt6(r.f1),
                fmt6(r.auc),
                fmt6(r.threshold),
                r.counts.tp,
                r.counts.fp,
                r.counts.tn,
                r.counts.fn_
            ));
        }
        out
    }

    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("model,term,estimate,std_error,p_value,stars\n");
        for m in &self.fit_summary {
            for c in &m.fixed_effects {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.model,
                    c.term,
                    fmt6(c.estimate),
                    fmt6(c.std_error),
                    fmt6(c.p_value),
                    c.stars
                ));
            }
        }
        out
    }

    /// Writes `comparison.json`, `metrics.csv`, `coefficients.csv` and one
    /// `roc_<model>.csv` per model into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut files = vec![
            ("comparison.json".to_string(), self.to_json()? + "\n"),
            ("metrics.csv".to_string(), self.metrics_csv()),
            ("coefficients.csv".to_string(), self.coefficients_csv()),
        ];
        for (name, points) in &self.roc {
            let mut body = String::from("fpr,tpr\n");
            for p in points {
                body.push_str(&format!("{},{}\n", fmt6(p.fpr), fmt6(p.tpr)));
            }
            files.push((format!("roc_{name}.csv"), body));
        }
        for (name, body) in files {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            f.write_all(body.as_bytes())
                .map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}
