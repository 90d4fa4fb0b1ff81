//! Synthetic two-level crash data with known parameters, and simulation of
//! coefficient variability from a fitted model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::datamodel::{CrashRecord, Dataset, RoadProfile, Term};
use crate::error::{Error, Result};
use crate::mixed::MixedFit;
use crate::numeric::{cholesky, inv_logit};
use crate::report::fmt6;

/// Crash counts per road: the same count everywhere, or one count per road.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSizes {
    Uniform(usize),
    PerGroup(Vec<usize>),
}

impl GroupSizes {
    fn get(&self, j: usize) -> usize {
        match self {
            GroupSizes::Uniform(n) => *n,
            GroupSizes::PerGroup(v) => v[j],
        }
    }
}

/// Generating law for the road-level covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadCovariateLaw {
    pub aadt_median: f64,
    /// Standard deviation of ln(aadt).
    pub aadt_log_sd: f64,
    pub access_density_range: (f64, f64),
    pub heavy_vehicle_ratio_range: (f64, f64),
}

impl Default for RoadCovariateLaw {
    fn default() -> Self {
        Self {
            aadt_median: 8110.0,
            aadt_log_sd: 0.5,
            access_density_range: (0.0, 2.2),
            heavy_vehicle_ratio_range: (0.0, 0.21),
        }
    }
}

/// Default Bernoulli rate of each crash-level flag.
pub fn default_covariate_rates() -> BTreeMap<Term, f64> {
    BTreeMap::from([
        (Term::Light, 0.34),
        (Term::Pavement, 0.11),
        (Term::Geometry, 0.37),
        (Term::Weather, 0.10),
        (Term::Education, 0.90),
        (Term::Age, 0.32),
        (Term::Gender, 0.95),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_groups: usize,
    pub n_per_group: GroupSizes,
    pub intercept: f64,
    /// True fixed slopes; absent terms have coefficient 0.
    pub beta: BTreeMap<Term, f64>,
    /// Standard deviation of the random intercept.
    pub sigma_intercept: f64,
    /// Standard deviations of random slopes.
    pub sigma_slopes: BTreeMap<Term, f64>,
    pub covariate_rates: BTreeMap<Term, f64>,
    pub road_law: RoadCovariateLaw,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_groups: 100,
            n_per_group: GroupSizes::Uniform(200),
            intercept: 0.0,
            beta: BTreeMap::new(),
            sigma_intercept: 0.0,
            sigma_slopes: BTreeMap::new(),
            covariate_rates: default_covariate_rates(),
            road_law: RoadCovariateLaw::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// 99 roads, 19,956 crashes, fixed effects and variance components of
    /// the magnitudes seen in the random-coefficient crash-severity model.
    pub fn paper_like(seed: u64) -> Self {
        let total = 19_956;
        let j = 99;
        let sizes = (0..j).map(|g| total / j + usize::from(g < total % j)).collect();
        Self {
            n_groups: j,
            n_per_group: GroupSizes::PerGroup(sizes),
            intercept: -0.7,
            beta: BTreeMap::from([
                (Term::Education, 0.46),
                (Term::Age, 0.26),
                (Term::Light, 0.12),
                (Term::Pavement, -0.34),
            ]),
            sigma_intercept: 0.826f64.sqrt(),
            sigma_slopes: BTreeMap::from([
                (Term::Education, 0.061f64.sqrt()),
                (Term::Age, 0.118f64.sqrt()),
                (Term::Light, 0.110f64.sqrt()),
                (Term::Pavement, 0.259f64.sqrt()),
            ]),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_groups == 0 {
            return bad("at least one group required".into());
        }
        if let GroupSizes::PerGroup(v) = &self.n_per_group {
            if v.len() != self.n_groups {
                return bad(format!("{} group sizes for {} groups", v.len(), self.n_groups));
            }
        }
        for (t, r) in &self.covariate_rates {
            if !(0.0..=1.0).contains(r) {
                return bad(format!("rate for `{t}` outside [0, 1]"));
            }
            if t.is_road_level() {
                return bad(format!("`{t}` is road-level, not a binary flag"));
            }
        }
        let negative = |s: f64| s.is_nan() || s < 0.0;
        if negative(self.sigma_intercept) || self.sigma_slopes.values().any(|&s| negative(s)) {
            return bad("standard deviations must be nonnegative".into());
        }
        if self.sigma_slopes.keys().any(|t| t.is_road_level()) {
            return bad("random slopes are only supported on crash-level flags".into());
        }
        let law = &self.road_law;
        if !(law.aadt_median > 0.0 && law.aadt_log_sd >= 0.0) {
            return bad("aadt law needs positive median and nonnegative spread".into());
        }
        let (a, b) = law.access_density_range;
        if !(0.0 <= a && a <= b) {
            return bad("access density range must be nonnegative and ordered".into());
        }
        let (a, b) = law.heavy_vehicle_ratio_range;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return bad("heavy vehicle ratio range must lie in [0, 1]".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        Uniform::new(lo, hi).expect("ordered range").sample(rng)
    } else {
        lo
    }
}

fn covariate(rec: &CrashRecord, road: &RoadProfile, term: Term) -> f64 {
    let flag = |b: bool| f64::from(u8::from(b));
    match term {
        Term::Light => flag(rec.lighting_night),
        Term::Pavement => flag(rec.pavement_adverse),
        Term::Geometry => flag(rec.geometry_curve),
        Term::Weather => flag(rec.weather_adverse),
        Term::Education => flag(rec.driver_no_university),
        Term::Age => flag(rec.driver_under_30),
        Term::Gender => flag(rec.driver_male),
        Term::AadtLog => road.aadt.ln(),
        Term::AccessDensity => road.access_density,
        Term::HeavyVehicleRatio => road.heavy_vehicle_ratio,
    }
}

/// Draws a dataset from the two-level logistic model in `config`.
///
/// Roads are `R001..`, crashes `C000001..`; all randomness comes from a
/// single ChaCha8 stream seeded with `config.seed`, consumed road by road.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let law = &config.road_law;
    let aadt = LogNormal::new(law.aadt_median.ln(), law.aadt_log_sd)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rate = |t: Term| config.covariate_rates.get(&t).copied().unwrap_or(0.0);

    let width = config.n_groups.to_string().len().max(3);
    let mut roads = BTreeMap::new();
    let mut records = Vec::new();
    for j in 0..config.n_groups {
        let road_id = format!("R{:0width$}", j + 1);
        let road = RoadProfile {
            road_id: road_id.clone(),
            aadt: aadt.sample(&mut rng),
            access_density: uniform(&mut rng, law.access_density_range),
            heavy_vehicle_ratio: uniform(&mut rng, law.heavy_vehicle_ratio_range),
        };
        let u0 = config.sigma_intercept * std_normal.sample(&mut rng);
        let slopes: Vec<(Term, f64)> = config
            .sigma_slopes
            .iter()
            .map(|(&t, &s)| (t, s * std_normal.sample(&mut rng)))
            .collect();
        for _ in 0..config.n_per_group.get(j) {
            let mut rec = CrashRecord {
                crash_id: format!("C{:06}", records.len() + 1),
                road_id: road_id.clone(),
                severity: false,
                lighting_night: rng.random_bool(rate(Term::Light)),
                pavement_adverse: rng.random_bool(rate(Term::Pavement)),
                geometry_curve: rng.random_bool(rate(Term::Geometry)),
                weather_adverse: rng.random_bool(rate(Term::Weather)),
                driver_no_university: rng.random_bool(rate(Term::Education)),
                driver_under_30: rng.random_bool(rate(Term::Age)),
                driver_male: rng.random_bool(rate(Term::Gender)),
            };
            let mut eta = config.intercept + u0;
            for (&t, &b) in &config.beta {
                eta += b * covariate(&rec, &road, t);
            }
            for &(t, u) in &slopes {
                eta += u * covariate(&rec, &road, t);
            }
            rec.severity = rng.random_bool(inv_logit(eta));
            records.push(rec);
        }
        roads.insert(road_id, road);
    }
    Dataset::new(records, roads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermInterval {
    pub term: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub draws: usize,
    /// (road id, mean simulated random intercept) in fit group order.
    pub road_intercepts: Vec<(String, f64)>,
    pub fixed_intervals: Vec<TermInterval>,
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Samples fixed effects from `N(β̂, V̂_β)` and each road's random effects
/// from `N(û_j, diag(sd_j²))` (mapped through `L̂`), `draws` times.
///
/// Draw `s` uses a ChaCha8 generator seeded with `seed` on stream `s`, so
/// draws are independent of evaluation order.
pub fn simulate_coefficients(fit: &MixedFit, draws: usize, seed: u64) -> Result<SimulationSummary> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    if draws == 0 {
        return Err(Error::InvalidConfig("at least one draw required".into()));
    }
    let p = fit.fixed.len();
    let q = fit.cov.q;
    let cov = DMatrix::from_fn(p, p, |a, b| fit.fixed_covariance[a][b]);
    let chol = cholesky(&cov).ok_or(Error::SingularInformation)?;
    let beta_hat = DVector::from_column_slice(&fit.fixed);
    let l = fit.factor();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut fixed_draws = vec![Vec::with_capacity(draws); p];
    let mut intercept_sums = vec![0.0; fit.group_labels.len()];
    for s in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let z = DVector::from_fn(p, |_, _| normal.sample(&mut rng));
        let beta = &beta_hat + &chol * z;
        for k in 0..p {
            fixed_draws[k].push(beta[k]);
        }
        for (j, (mode, sd)) in fit.conditional_modes.iter().zip(&fit.conditional_sds).enumerate() {
            let u = DVector::from_fn(q, |k, _| mode[k] + sd[k] * normal.sample(&mut rng));
            intercept_sums[j] += (l.row(0) * u)[0];
        }
    }

    let fixed_intervals = fixed_draws
        .into_iter()
        .zip(&fit.column_names)
        .map(|(mut v, name)| {
            let mean = v.iter().sum::<f64>() / draws as f64;
            v.sort_by(|a, b| a.total_cmp(b));
            TermInterval {
                term: name.clone(),
                mean,
                lower: quantile(&v, 0.025).min(mean),
                upper: quantile(&v, 0.975).max(mean),
            }
        })
        .collect();
    let road_intercepts = fit
        .group_labels
        .iter()
        .zip(intercept_sums)
        .map(|(g, s)| (g.clone(), s / draws as f64))
        .collect();
    Ok(SimulationSummary {
        draws,
        road_intercepts,
        fixed_intervals,
    })
}

impl SimulationSummary {
    /// Writes `roads_intercepts.csv` and `fixed_intervals.csv` into `dir`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut roads = String::from("road_id,mean_intercept\n");
        for (g, v) in &self.road_intercepts {
            roads.push_str(&format!("{g},{}\n", fmt6(*v)));
        }
        let mut fixed = String::from("term,mean,lo,hi\n");
        for t in &self.fixed_intervals {
            fixed.push_str(&format!(
                "{},{},{},{}\n",
                t.term,
                fmt6(t.mean),
                fmt6(t.lower),
                fmt6(t.upper)
            ));
        }
        for (name, body) in [("roads_intercepts.csv", roads), ("fixed_intervals.csv", fixed)] {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            f.write_all(body.as_bytes()).map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}
