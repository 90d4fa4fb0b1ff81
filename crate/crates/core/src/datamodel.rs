//! Dataset schema, CSV ingestion, design-matrix encoding and train/test splits.
//!
//! Crash rows are level-1 observations nested in roads (level-2 groups).
//! Crash-level covariates are binary flags; road-level covariates are
//! broadcast to every crash on that road when the design is encoded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CRASH_HEADER: [&str; 10] = [
    "crash_id",
    "road_id",
    "severity",
    "lighting_night",
    "pavement_adverse",
    "geometry_curve",
    "weather_adverse",
    "driver_no_university",
    "driver_under_30",
    "driver_male",
];

pub const ROAD_HEADER: [&str; 4] = ["road_id", "aadt", "access_density", "heavy_vehicle_ratio"];

/// A covariate that can enter the fixed or random part of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Light,
    Pavement,
    Geometry,
    Weather,
    Education,
    Age,
    Gender,
    AadtLog,
    AccessDensity,
    HeavyVehicleRatio,
}

impl Term {
    pub const ALL: [Term; 10] = [
        Term::Light,
        Term::Pavement,
        Term::Geometry,
        Term::Weather,
        Term::Education,
        Term::Age,
        Term::Gender,
        Term::AadtLog,
        Term::AccessDensity,
        Term::HeavyVehicleRatio,
    ];

    pub const CRASH_LEVEL: [Term; 7] = [
        Term::Light,
        Term::Pavement,
        Term::Geometry,
        Term::Weather,
        Term::Education,
        Term::Age,
        Term::Gender,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Light => "light",
            Term::Pavement => "pavement",
            Term::Geometry => "geometry",
            Term::Weather => "weather",
            Term::Education => "education",
            Term::Age => "age",
            Term::Gender => "gender",
            Term::AadtLog => "aadt_log",
            Term::AccessDensity => "access_density",
            Term::HeavyVehicleRatio => "heavy_vehicle_ratio",
        }
    }

    /// Name of the CSV column backing this term.
    pub fn column(self) -> &'static str {
        match self {
            Term::Light => "lighting_night",
            Term::Pavement => "pavement_adverse",
            Term::Geometry => "geometry_curve",
            Term::Weather => "weather_adverse",
            Term::Education => "driver_no_university",
            Term::Age => "driver_under_30",
            Term::Gender => "driver_male",
            Term::AadtLog => "aadt",
            Term::AccessDensity => "access_density",
            Term::HeavyVehicleRatio => "heavy_vehicle_ratio",
        }
    }

    pub fn is_road_level(self) -> bool {
        matches!(
            self,
            Term::AadtLog | Term::AccessDensity | Term::HeavyVehicleRatio
        )
    }

    fn crash_value(self, rec: &CrashRecord) -> Option<bool> {
        Some(match self {
            Term::Light => rec.lighting_night,
            Term::Pavement => rec.pavement_adverse,
            Term::Geometry => rec.geometry_curve,
            Term::Weather => rec.weather_adverse,
            Term::Education => rec.driver_no_university,
            Term::Age => rec.driver_under_30,
            Term::Gender => rec.driver_male,
            _ => return None,
        })
    }

    fn road_value(self, road: &RoadProfile) -> Option<f64> {
        match self {
            Term::AadtLog => Some(road.aadt.ln()),
            Term::AccessDensity => Some(road.access_density),
            Term::HeavyVehicleRatio => Some(road.heavy_vehicle_ratio),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;

    /// Accepts the short term name, the CSV column name, or a few common aliases.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let term = match key.as_str() {
            "light" | "lighting" | "lighting_night" | "night" => Term::Light,
            "pavement" | "pavement_adverse" => Term::Pavement,
            "geometry" | "geometry_curve" | "curve" => Term::Geometry,
            "weather" | "weather_adverse" => Term::Weather,
            "education" | "driver_no_university" => Term::Education,
            "age" | "driver_under_30" => Term::Age,
            "gender" | "driver_male" | "male" => Term::Gender,
            "aadt_log" | "aadt.log" | "log_aadt" | "aadt" => Term::AadtLog,
            "access_density" | "access" => Term::AccessDensity,
            "heavy_vehicle_ratio" | "heavy_vehicle" | "heavy" => Term::HeavyVehicleRatio,
            _ => return Err(Error::UnknownTerm(s.to_string())),
        };
        Ok(term)
    }
}

/// Parses a comma-separated term list; an empty string yields no terms.
pub fn parse_terms(list: &str) -> Result<Vec<Term>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Term::from_str)
        .collect()
}

/// One crash (level-1 observation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub crash_id: String,
    pub road_id: String,
    /// `true` for injury or fatality, `false` for property damage only.
    pub severity: bool,
    pub lighting_night: bool,
    pub pavement_adverse: bool,
    pub geometry_curve: bool,
    pub weather_adverse: bool,
    pub driver_no_university: bool,
    pub driver_under_30: bool,
    pub driver_male: bool,
}

/// One road (level-2 group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    pub road_id: String,
    pub aadt: f64,
    pub access_density: f64,
    pub heavy_vehicle_ratio: f64,
}

impl RoadProfile {
    fn validate(&self, row: usize) -> Result<()> {
        if !(self.aadt > 0.0 && self.aadt.is_finite()) {
            return Err(Error::NonPositiveAadt {
                row,
                value: self.aadt,
            });
        }
        if !(self.access_density >= 0.0 && self.access_density.is_finite()) {
            return Err(Error::InvalidValue {
                row,
                column: "access_density".into(),
                value: self.access_density.to_string(),
                reason: "must be nonnegative".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.heavy_vehicle_ratio) {
            return Err(Error::InvalidValue {
                row,
                column: "heavy_vehicle_ratio".into(),
                value: self.heavy_vehicle_ratio.to_string(),
                reason: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Crash records together with the road table they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<CrashRecord>,
    roads: BTreeMap<String, RoadProfile>,
}

impl Dataset {
    pub fn new(records: Vec<CrashRecord>, roads: BTreeMap<String, RoadProfile>) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            if !roads.contains_key(&rec.road_id) {
                return Err(Error::UnresolvedRoadId {
                    row: i + 2,
                    road_id: rec.road_id.clone(),
                });
            }
        }
        for (i, road) in roads.values().enumerate() {
            road.validate(i + 2)?;
        }
        Ok(Self { records, roads })
    }

    pub fn records(&self) -> &[CrashRecord] {
        &self.records
    }

    pub fn roads(&self) -> &BTreeMap<String, RoadProfile> {
        &self.roads
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of roads in the road table.
    pub fn n_roads(&self) -> usize {
        self.roads.len()
    }

    /// Distinct roads that carry at least one crash.
    pub fn observed_roads(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.road_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            roads: self.roads.clone(),
        }
    }
}

/// A row dropped during ingestion because a field was missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedRow {
    pub file: String,
    pub row: usize,
    pub reason: String,
}

/// Outcome of [`load_dataset`]: the validated data plus what was dropped.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub dropped: Vec<DroppedRow>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

fn column_positions(
    path: &Path,
    headers: &csv::StringRecord,
    wanted: &[&str],
) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == *col)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: col.to_string(),
                })
        })
        .collect()
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_flag(row: usize, column: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::InvalidBinaryValue {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn parse_real(row: usize, column: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidValue {
            row,
            column: column.to_string(),
            value: value.to_string(),
            reason: "not a finite number".into(),
        })
}

/// Reads and validates the crash and road tables.
///
/// Rows with a missing field (empty, `NA`) are dropped and listed in
/// [`Loaded::dropped`]; crashes on a road whose row was dropped go with it.
/// Any other malformed value is an error naming the file line.
pub fn load_dataset(crash_csv: impl AsRef<Path>, road_csv: impl AsRef<Path>) -> Result<Loaded> {
    let crash_path = crash_csv.as_ref();
    let road_path = road_csv.as_ref();
    let mut dropped = Vec::new();

    let mut road_reader = open_csv(road_path)?;
    let headers = road_reader
        .headers()
        .map_err(|e| csv_err(road_path, e))?
        .clone();
    let pos = column_positions(road_path, &headers, &ROAD_HEADER)?;
    let mut roads = BTreeMap::new();
    let mut dropped_roads = BTreeSet::new();
    for (i, rec) in road_reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(road_path, e))?;
        let field = |k: usize| rec.get(pos[k]).unwrap_or("");
        let road_id = field(0).to_string();
        if let Some(k) = (0..pos.len()).find(|&k| is_missing(field(k))) {
            dropped.push(DroppedRow {
                file: road_path.display().to_string(),
                row,
                reason: format!("missing `{}`", ROAD_HEADER[k]),
            });
            dropped_roads.insert(road_id);
            continue;
        }
        let road = RoadProfile {
            road_id: road_id.clone(),
            aadt: parse_real(row, "aadt", field(1))?,
            access_density: parse_real(row, "access_density", field(2))?,
            heavy_vehicle_ratio: parse_real(row, "heavy_vehicle_ratio", field(3))?,
        };
        road.validate(row)?;
        if roads.insert(road_id.clone(), road).is_some() {
            return Err(Error::DuplicateId {
                kind: "road",
                id: road_id,
            });
        }
    }

    let mut crash_reader = open_csv(crash_path)?;
    let headers = crash_reader
        .headers()
        .map_err(|e| csv_err(crash_path, e))?
        .clone();
    let pos = column_positions(crash_path, &headers, &CRASH_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in crash_reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(crash_path, e))?;
        let field = |k: usize| rec.get(pos[k]).unwrap_or("");
        if let Some(k) = (0..pos.len()).find(|&k| is_missing(field(k))) {
            dropped.push(DroppedRow {
                file: crash_path.display().to_string(),
                row,
                reason: format!("missing `{}`", CRASH_HEADER[k]),
            });
            continue;
        }
        let road_id = field(1).to_string();
        if !roads.contains_key(&road_id) {
            if dropped_roads.contains(&road_id) {
                dropped.push(DroppedRow {
                    file: crash_path.display().to_string(),
                    row,
                    reason: format!("road `{road_id}` was dropped"),
                });
                continue;
            }
            return Err(Error::UnresolvedRoadId { row, road_id });
        }
        let flag = |k: usize| parse_flag(row, CRASH_HEADER[k], field(k));
        records.push(CrashRecord {
            crash_id: field(0).to_string(),
            road_id,
            severity: flag(2)?,
            lighting_night: flag(3)?,
            pavement_adverse: flag(4)?,
            geometry_curve: flag(5)?,
            weather_adverse: flag(6)?,
            driver_no_university: flag(7)?,
            driver_under_30: flag(8)?,
            driver_male: flag(9)?,
        });
    }

    Ok(Loaded {
        dataset: Dataset { records, roads },
        dropped,
    })
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes the two CSV tables in the ingestion schema.
pub fn write_dataset(
    dataset: &Dataset,
    crash_csv: impl AsRef<Path>,
    road_csv: impl AsRef<Path>,
) -> Result<()> {
    let crash_path = crash_csv.as_ref();
    let road_path = road_csv.as_ref();
    let mut w = csv::WriterBuilder::new()
        .from_path(crash_path)
        .map_err(|e| csv_err(crash_path, e))?;
    w.write_record(CRASH_HEADER)
        .map_err(|e| csv_err(crash_path, e))?;
    for r in &dataset.records {
        w.write_record([
            r.crash_id.as_str(),
            r.road_id.as_str(),
            bit(r.severity),
            bit(r.lighting_night),
            bit(r.pavement_adverse),
            bit(r.geometry_curve),
            bit(r.weather_adverse),
            bit(r.driver_no_university),
            bit(r.driver_under_30),
            bit(r.driver_male),
        ])
        .map_err(|e| csv_err(crash_path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: crash_path.to_path_buf(),
        source,
    })?;

    let mut w = csv::WriterBuilder::new()
        .from_path(road_path)
        .map_err(|e| csv_err(road_path, e))?;
    w.write_record(ROAD_HEADER)
        .map_err(|e| csv_err(road_path, e))?;
    for r in dataset.roads.values() {
        w.write_record([
            r.road_id.clone(),
            r.aadt.to_string(),
            r.access_density.to_string(),
            r.heavy_vehicle_ratio.to_string(),
        ])
        .map_err(|e| csv_err(road_path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: road_path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Which covariates enter the model and which carry road-specific slopes.
///
/// The link is always logit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fixed_terms: Vec<Term>,
    pub random_intercept: bool,
    #[serde(default)]
    pub random_slope_terms: Vec<Term>,
    /// Center continuous road-level covariates at their across-road mean.
    #[serde(default)]
    pub center_road_level: bool,
}

impl ModelSpec {
    pub fn glm(terms: Vec<Term>) -> Self {
        Self {
            fixed_terms: terms,
            ..Self::default()
        }
    }

    pub fn null() -> Self {
        Self {
            random_intercept: true,
            ..Self::default()
        }
    }

    pub fn random_intercept(terms: Vec<Term>) -> Self {
        Self {
            fixed_terms: terms,
            random_intercept: true,
            ..Self::default()
        }
    }

    pub fn random_coefficients(terms: Vec<Term>, slopes: Vec<Term>) -> Self {
        Self {
            fixed_terms: terms,
            random_intercept: true,
            random_slope_terms: slopes,
            center_road_level: false,
        }
    }

    pub fn is_multilevel(&self) -> bool {
        self.random_intercept
    }

    /// Random-effect dimension: intercept plus one per slope term.
    pub fn n_random(&self) -> usize {
        if self.random_intercept {
            1 + self.random_slope_terms.len()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.fixed_terms {
            if !seen.insert(*t) {
                return Err(Error::InvalidSpec(format!("term `{t}` listed twice")));
            }
        }
        if !self.random_slope_terms.is_empty() && !self.random_intercept {
            return Err(Error::InvalidSpec(
                "random slopes require a random intercept".into(),
            ));
        }
        let mut seen_slopes = BTreeSet::new();
        for t in &self.random_slope_terms {
            if !self.fixed_terms.contains(t) {
                return Err(Error::InvalidSpec(format!(
                    "random slope `{t}` is not among the fixed terms"
                )));
            }
            if !seen_slopes.insert(*t) {
                return Err(Error::InvalidSpec(format!("random slope `{t}` listed twice")));
            }
        }
        Ok(())
    }

    /// Column names of the encoded design: `intercept` then the fixed terms.
    pub fn column_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.fixed_terms.iter().map(|t| t.name().to_string()))
            .collect()
    }

    /// Names of the random-effect dimensions in covariance order.
    pub fn random_names(&self) -> Vec<String> {
        if !self.random_intercept {
            return Vec::new();
        }
        std::iter::once("intercept".to_string())
            .chain(self.random_slope_terms.iter().map(|t| t.name().to_string()))
            .collect()
    }
}

/// Encoded response, fixed-effects matrix and grouping for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y: Vec<f64>,
    /// n × p; column 0 is the intercept.
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// Group ordinal per row, in `0..group_labels.len()`.
    pub group_index: Vec<usize>,
    /// Road id per group ordinal (sorted road ids of the road table).
    pub group_labels: Vec<String>,
    /// Columns of `x` that carry random slopes, in slope order.
    pub z_cols: Vec<usize>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    /// Random-effect row for observation `i`: 1 followed by the slope covariates.
    pub fn z_row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(1.0).chain(self.z_cols.iter().map(move |&c| self.x[(i, c)]))
    }

    /// Row indices of each group, in row order.
    pub fn rows_by_group(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, &g) in self.group_index.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// Builds a design directly from arrays, checking the structural invariants.
    pub fn from_parts(
        y: Vec<f64>,
        x: DMatrix<f64>,
        column_names: Vec<String>,
        group_index: Vec<usize>,
        group_labels: Vec<String>,
        z_cols: Vec<usize>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.nrows(),
            });
        }
        if group_index.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: group_index.len(),
            });
        }
        if column_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: column_names.len(),
            });
        }
        if x.ncols() == 0 || (0..n).any(|i| x[(i, 0)] != 1.0) {
            return Err(Error::InvalidSpec("column 0 must be the intercept".into()));
        }
        if group_labels.is_empty() || group_index.iter().any(|&g| g >= group_labels.len()) {
            return Err(Error::InvalidSpec("group index out of range".into()));
        }
        if z_cols.iter().any(|&c| c == 0 || c >= x.ncols()) {
            return Err(Error::InvalidSpec("invalid random-slope column".into()));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidSpec("response must be 0/1".into()));
        }
        Ok(Self {
            y,
            x,
            column_names,
            group_index,
            group_labels,
            z_cols,
        })
    }
}

/// Encodes a dataset under a model specification.
///
/// Binary covariates pass through as 0/1, AADT enters as its natural log,
/// road-level covariates are broadcast to each crash row, and columns are
/// ordered intercept first, then `spec.fixed_terms`.
pub fn encode_design(dataset: &Dataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let p = 1 + spec.fixed_terms.len();
    let group_labels: Vec<String> = dataset.roads.keys().cloned().collect();
    let ordinal: BTreeMap<&str, usize> = group_labels
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();

    let centers: Vec<f64> = spec
        .fixed_terms
        .iter()
        .map(|t| {
            if spec.center_road_level && t.is_road_level() {
                let vals: Vec<f64> = dataset
                    .roads
                    .values()
                    .filter_map(|r| t.road_value(r))
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            } else {
                0.0
            }
        })
        .collect();

    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    let mut group_index = Vec::with_capacity(n);
    for (i, rec) in dataset.records.iter().enumerate() {
        let road = &dataset.roads[&rec.road_id];
        y.push(if rec.severity { 1.0 } else { 0.0 });
        group_index.push(ordinal[rec.road_id.as_str()]);
        x[(i, 0)] = 1.0;
        for (k, term) in spec.fixed_terms.iter().enumerate() {
            let v = match term.crash_value(rec) {
                Some(b) => f64::from(u8::from(b)),
                None => term.road_value(road).expect("road-level term") - centers[k],
            };
            x[(i, k + 1)] = v;
        }
    }
    let z_cols = spec
        .random_slope_terms
        .iter()
        .map(|t| 1 + spec.fixed_terms.iter().position(|f| f == t).expect("validated"))
        .collect();
    Ok(DesignMatrices {
        y,
        x,
        column_names: spec.column_names(),
        group_index,
        group_labels,
        z_cols,
    })
}

/// Seeded crash-level train/test split.
///
/// The stable record order is shuffled by a ChaCha8 permutation seeded from
/// `seed`; the first `floor(n * train_fraction)` shuffled records form the
/// training set. Both partitions keep the original record order and share
/// the full road table.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    let degenerate = Error::DegenerateSplit {
        n,
        fraction: train_fraction,
    };
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(degenerate);
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(degenerate);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (train_idx, test_idx) = order.split_at_mut(n_train);
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(train_idx), dataset.subset(test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const ROADS: &str = "road_id,aadt,access_density,heavy_vehicle_ratio\nR1,8110,1.0,0.1\nR2,500,0.5,0.2\n";
    const HEADER: &str = "crash_id,road_id,severity,lighting_night,pavement_adverse,geometry_curve,weather_adverse,driver_no_university,driver_under_30,driver_male\n";

    fn load(crashes: &str, roads: &str) -> Result<Loaded> {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "c.csv", crashes);
        let r = write(dir.path(), "r.csv", roads);
        load_dataset(c, r)
    }

    #[test]
    fn loads_well_formed_file() {
        let body = format!(
            "{HEADER}C1,R1,1,1,0,0,0,1,0,1\nC2,R1,0,0,0,1,0,1,1,1\r\nC3,R2,0,0,1,0,1,0,0,0\n"
        );
        let loaded = load(&body, ROADS).unwrap();
        assert_eq!(loaded.dataset.len(), 3);
        assert_eq!(loaded.dataset.n_roads(), 2);
        assert!(loaded.dropped.is_empty());
        let d = encode_design(&loaded.dataset, &ModelSpec::null()).unwrap();
        assert_eq!((d.n(), d.n_groups()), (3, 2));
    }

    #[test]
    fn unknown_road_is_reported_with_row() {
        let body = format!("{HEADER}C1,R1,1,1,0,0,0,1,0,1\nC2,R99,0,0,0,1,0,1,1,1\n");
        match load(&body, ROADS) {
            Err(Error::UnresolvedRoadId { row, road_id }) => {
                assert_eq!(row, 3);
                assert_eq!(road_id, "R99");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn severity_two_is_invalid_binary() {
        let body = format!("{HEADER}C1,R1,2,1,0,0,0,1,0,1\n");
        assert!(matches!(
            load(&body, ROADS),
            Err(Error::InvalidBinaryValue { row: 2, ref column, .. }) if column == "severity"
        ));
    }

    #[test]
    fn missing_column_and_bad_aadt() {
        let body = "crash_id,road_id,severity\nC1,R1,1\n";
        assert!(matches!(load(body, ROADS), Err(Error::MissingColumn { .. })));
        let roads = "road_id,aadt,access_density,heavy_vehicle_ratio\nR1,0,1.0,0.1\n";
        let body = format!("{HEADER}C1,R1,1,1,0,0,0,1,0,1\n");
        assert!(matches!(
            load(&body, roads),
            Err(Error::NonPositiveAadt { row: 2, .. })
        ));
    }

    #[test]
    fn incomplete_rows_are_dropped_and_counted() {
        let body = format!("{HEADER}C1,R1,1,1,0,0,0,1,0,1\nC2,R1,,0,0,1,0,1,1,1\nC3,R2,0,NA,1,0,1,0,0,0\n");
        let loaded = load(&body, ROADS).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.dropped.len(), 2);
        assert_eq!(loaded.dropped[0].row, 3);
    }

    fn tiny() -> Dataset {
        let mut roads = BTreeMap::new();
        roads.insert(
            "R1".to_string(),
            RoadProfile {
                road_id: "R1".into(),
                aadt: 8110.0,
                access_density: 1.0,
                heavy_vehicle_ratio: 0.1,
            },
        );
        let rec = |id: &str, night: bool| CrashRecord {
            crash_id: id.into(),
            road_id: "R1".into(),
            severity: night,
            lighting_night: night,
            pavement_adverse: false,
            geometry_curve: false,
            weather_adverse: true,
            driver_no_university: false,
            driver_under_30: false,
            driver_male: true,
        };
        Dataset::new(vec![rec("a", true), rec("b", false)], roads).unwrap()
    }

    #[test]
    fn encoding_follows_table_coding() {
        let ds = tiny();
        let spec = ModelSpec::glm(vec![Term::Light, Term::AadtLog, Term::Weather]);
        let d = encode_design(&ds, &spec).unwrap();
        assert_eq!(d.x[(0, 1)], 1.0);
        assert_eq!(d.x[(1, 1)], 0.0);
        // ln(8110) = 9.000853147109458... (30-digit reference)
        assert!((d.x[(0, 2)] - 9.000_853_147_109_459).abs() < 1e-12);
        assert_eq!(d.x[(0, 3)], 1.0);
        assert_eq!(d.column_names, ["intercept", "light", "aadt_log", "weather"]);

        let d0 = encode_design(&ds, &ModelSpec::glm(vec![])).unwrap();
        assert_eq!(d0.x, DMatrix::from_element(2, 1, 1.0));
    }

    #[test]
    fn centering_removes_road_mean() {
        let ds = tiny();
        let spec = ModelSpec {
            fixed_terms: vec![Term::AadtLog],
            center_road_level: true,
            ..ModelSpec::default()
        };
        let d = encode_design(&ds, &spec).unwrap();
        assert!(d.x[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_and_unknown_term() {
        let ds = Dataset::new(vec![], tiny().roads.clone()).unwrap();
        assert!(matches!(
            encode_design(&ds, &ModelSpec::null()),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!("trd".parse::<Term>(), Err(Error::UnknownTerm(_))));
    }

    #[test]
    fn spec_validation() {
        let bad = ModelSpec {
            fixed_terms: vec![Term::Age],
            random_intercept: false,
            random_slope_terms: vec![Term::Age],
            center_road_level: false,
        };
        assert!(bad.validate().is_err());
        let bad = ModelSpec::random_coefficients(vec![Term::Age], vec![Term::Light]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        assert_eq!((19_956f64 * 0.8).floor() as usize, 15_964);
        let mut roads = BTreeMap::new();
        roads.insert(
            "R1".to_string(),
            RoadProfile {
                road_id: "R1".into(),
                aadt: 100.0,
                access_density: 0.0,
                heavy_vehicle_ratio: 0.0,
            },
        );
        let recs = (0..10)
            .map(|i| CrashRecord {
                crash_id: format!("C{i}"),
                road_id: "R1".into(),
                severity: i % 2 == 0,
                lighting_night: false,
                pavement_adverse: false,
                geometry_curve: false,
                weather_adverse: false,
                driver_no_university: false,
                driver_under_30: false,
                driver_male: false,
            })
            .collect();
        let ds = Dataset::new(recs, roads).unwrap();
        let (tr, te) = split(&ds, 0.8, 42).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split(&ds, 0.8, 42).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert!(matches!(split(&ds, 1.0, 1), Err(Error::DegenerateSplit { .. })));
        assert!(matches!(split(&ds, 0.05, 1), Err(Error::DegenerateSplit { .. })));
    }
}
