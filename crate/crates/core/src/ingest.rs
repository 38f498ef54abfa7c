//! Radar table ingestion, feature derivation, synthetic data and splits.
//!
//! Raw files are comma-separated with one header row. Every feature cell holds
//! a space-separated time series aligned with the `TimeToEnd` cell of the same
//! row (minutes before the end of the hour). The token `nan` marks a missing
//! scan value; an empty cell marks a fully missing series. The label column is
//! `Expected` (mm of rain in the hour); an optional `Id` column is ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TIME_TO_END: &str = "TimeToEnd";
pub const RR1: &str = "RR1";
pub const RR2: &str = "RR2";
pub const RR3: &str = "RR3";
pub const LABEL_COLUMN: &str = "Expected";
pub const ID_COLUMN: &str = "Id";
/// Derived feature replacing `TimeToEnd`: fraction of the hour spanned by scans.
pub const COVERAGE: &str = "Coverage";

const REQUIRED: [&str; 4] = [TIME_TO_END, RR1, RR2, RR3];

/// One feature's scans within an hour. `times` are minutes to the end of the
/// hour, strictly decreasing, parallel to `values`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeriesCell {
    pub values: Vec<f64>,
    pub times: Vec<f64>,
}

impl TimeSeriesCell {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: usize,
    pub cells: BTreeMap<String, TimeSeriesCell>,
    pub label: Option<f64>,
}

impl RawRecord {
    pub fn cell(&self, name: &str) -> Option<&TimeSeriesCell> {
        self.cells.get(name)
    }
}

/// Parsed raw table. `schema` lists feature columns in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: Vec<String>,
    pub records: Vec<RawRecord>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        RawDataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Fixed-width derived features for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Option<f64>,
}

/// Derived feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub rows: Vec<FeatureVector>,
}

impl Dataset {
    pub fn new(schema: Vec<String>, rows: Vec<FeatureVector>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != schema.len() {
                return Err(Error::Structure {
                    row: i,
                    message: format!(
                        "{} features, schema has {}",
                        row.values.len(),
                        schema.len()
                    ),
                });
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("feature `{name}` not in dataset schema")))
    }

    /// All labels; fails if any row is unlabeled.
    pub fn labels(&self) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.label
                    .ok_or_else(|| Error::Data(format!("row {i} has no label")))
            })
            .collect()
    }

    /// Row-major feature matrix.
    pub fn matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim());
        for row in &self.rows {
            out.extend_from_slice(&row.values);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

fn parse_series(text: &str, row: usize, column: &str) -> Result<Vec<Option<f64>>> {
    text.split_whitespace()
        .map(|tok| {
            if tok.eq_ignore_ascii_case("nan") {
                return Ok(None);
            }
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(Error::Parse {
                    row,
                    column: column.to_string(),
                    message: format!("malformed float token `{tok}`"),
                }),
            }
        })
        .collect()
}

/// Parses a raw radar table from a file.
pub fn parse_dataset(path: &Path, has_labels: bool) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(std::io::BufReader::new(file), has_labels)
}

pub fn parse_reader<R: Read>(reader: R, has_labels: bool) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for name in REQUIRED {
        if !header.iter().any(|h| h == name) {
            return Err(Error::Schema(format!("missing required column `{name}`")));
        }
    }
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    if has_labels && label_col.is_none() {
        return Err(Error::Schema(format!(
            "missing required column `{LABEL_COLUMN}`"
        )));
    }
    let tte_col = header.iter().position(|h| h == TIME_TO_END).unwrap();
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i] != ID_COLUMN && header[i] != LABEL_COLUMN)
        .collect();
    let schema: Vec<String> = feature_cols.iter().map(|&i| header[i].clone()).collect();

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let fields = result?;
        if fields.len() != header.len() {
            return Err(Error::Structure {
                row,
                message: format!("{} fields, header has {}", fields.len(), header.len()),
            });
        }

        let raw_times = parse_series(&fields[tte_col], row, TIME_TO_END)?;
        let times: Vec<f64> = raw_times.iter().flatten().copied().collect();
        check_times(&times, row)?;

        let mut cells = BTreeMap::new();
        for &col in &feature_cols {
            let name = &header[col];
            let cell = if col == tte_col {
                TimeSeriesCell {
                    values: times.clone(),
                    times: times.clone(),
                }
            } else {
                let values = parse_series(&fields[col], row, name)?;
                if values.is_empty() {
                    TimeSeriesCell::default()
                } else if values.len() != raw_times.len() {
                    return Err(Error::Structure {
                        row,
                        message: format!(
                            "`{name}` has {} values but `{TIME_TO_END}` has {}",
                            values.len(),
                            raw_times.len()
                        ),
                    });
                } else {
                    let mut cell = TimeSeriesCell::default();
                    for (v, t) in values.iter().zip(&raw_times) {
                        if let (Some(v), Some(t)) = (v, t) {
                            cell.values.push(*v);
                            cell.times.push(*t);
                        }
                    }
                    cell
                }
            };
            cells.insert(name.clone(), cell);
        }

        let label = match label_col {
            Some(col) if has_labels => {
                let text = fields[col].trim();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                    _ => {
                        return Err(Error::Parse {
                            row,
                            column: LABEL_COLUMN.into(),
                            message: format!("invalid label `{text}`"),
                        })
                    }
                }
            }
            _ => None,
        };

        records.push(RawRecord {
            id: row,
            cells,
            label,
        });
    }
    Ok(RawDataset { schema, records })
}

fn check_times(times: &[f64], row: usize) -> Result<()> {
    for (i, &t) in times.iter().enumerate() {
        if !(0.0..=60.0).contains(&t) {
            return Err(Error::Structure {
                row,
                message: format!("scan time {t} outside [0, 60]"),
            });
        }
        if i > 0 && t >= times[i - 1] {
            return Err(Error::Structure {
                row,
                message: format!("scan times not strictly decreasing at position {i}"),
            });
        }
    }
    Ok(())
}

fn join_series(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("write to string");
    }
}

/// Writes a raw table in the same format [`parse_dataset`] reads.
pub fn write_raw(path: &Path, data: &RawDataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw_to(std::io::BufWriter::new(file), data)
}

pub fn write_raw_to<W: std::io::Write>(writer: W, data: &RawDataset) -> Result<()> {
    let labeled = data.is_labeled() && !data.is_empty();
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(data.schema.iter().cloned());
    if labeled {
        header.push(LABEL_COLUMN.into());
    }
    wtr.write_record(&header)?;

    for rec in &data.records {
        let empty = TimeSeriesCell::default();
        let times = &rec.cell(TIME_TO_END).unwrap_or(&empty).times;
        let mut fields = vec![rec.id.to_string()];
        for name in &data.schema {
            let cell = rec.cell(name).unwrap_or(&empty);
            let mut text = String::new();
            if name == TIME_TO_END {
                join_series(&mut text, times);
            } else if !cell.is_empty() {
                // Re-expand onto the full scan schedule, writing `nan` where
                // the cell has no value.
                let mut k = 0;
                for (i, &t) in times.iter().enumerate() {
                    if i > 0 {
                        text.push(' ');
                    }
                    if k < cell.times.len() && cell.times[k] == t {
                        write!(text, "{}", cell.values[k]).expect("write to string");
                        k += 1;
                    } else {
                        text.push_str("nan");
                    }
                }
                if k != cell.times.len() {
                    return Err(Error::Structure {
                        row: rec.id,
                        message: format!("`{name}` times are not on the row's scan schedule"),
                    });
                }
            }
            fields.push(text);
        }
        if labeled {
            fields.push(rec.label.unwrap().to_string());
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io("<raw output>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature derivation

#[derive(Debug, Clone, PartialEq)]
pub struct MissingDataPolicy {
    /// Raw columns excluded from the derived schema.
    pub dropped: Vec<String>,
    /// Value used for fully missing cells.
    pub impute: f64,
}

impl Default for MissingDataPolicy {
    fn default() -> Self {
        MissingDataPolicy {
            dropped: vec![RR2.into(), RR3.into()],
            impute: 0.0,
        }
    }
}

impl MissingDataPolicy {
    /// Retains every column, including RR2 and RR3.
    pub fn keep_all() -> Self {
        MissingDataPolicy {
            dropped: Vec::new(),
            impute: 0.0,
        }
    }

    fn keeps(&self, name: &str) -> bool {
        !self.dropped.iter().any(|d| d == name)
    }
}

/// Derived feature names for a raw schema under `policy`.
pub fn derived_schema(raw_schema: &[String], policy: &MissingDataPolicy) -> Vec<String> {
    raw_schema
        .iter()
        .filter(|n| policy.keeps(n))
        .map(|n| {
            if n == TIME_TO_END {
                COVERAGE.to_string()
            } else {
                n.clone()
            }
        })
        .collect()
}

/// Per-series means, with `TimeToEnd` replaced by radar coverage.
pub fn derive_features(
    record: &RawRecord,
    raw_schema: &[String],
    policy: &MissingDataPolicy,
) -> FeatureVector {
    let values = raw_schema
        .iter()
        .filter(|n| policy.keeps(n))
        .map(|name| {
            let cell = record.cell(name);
            if name == TIME_TO_END {
                cell.map_or(0.0, coverage)
            } else {
                cell.and_then(TimeSeriesCell::mean).unwrap_or(policy.impute)
            }
        })
        .collect();
    FeatureVector {
        values,
        label: record.label,
    }
}

fn coverage(cell: &TimeSeriesCell) -> f64 {
    if cell.times.is_empty() {
        return 0.0;
    }
    let max = cell.times.iter().copied().fold(f64::MIN, f64::max);
    let min = cell.times.iter().copied().fold(f64::MAX, f64::min);
    (max - min) / 60.0
}

pub fn derive_dataset(raw: &RawDataset, policy: &MissingDataPolicy) -> Dataset {
    Dataset {
        schema: derived_schema(&raw.schema, policy),
        rows: raw
            .records
            .iter()
            .map(|r| derive_features(r, &raw.schema, policy))
            .collect(),
    }
}

/// Writes a derived table: schema columns, then `Expected` when every row is labeled.
pub fn write_derived(path: &Path, data: &Dataset) -> Result<()> {
    let labeled = !data.is_empty() && data.rows.iter().all(|r| r.label.is_some());
    let mut out = String::new();
    out.push_str(&data.schema.join(","));
    if labeled {
        out.push(',');
        out.push_str(LABEL_COLUMN);
    }
    out.push('\n');
    for row in &data.rows {
        for (i, v) in row.values.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
        }
        if labeled {
            write!(out, ",{}", row.label.unwrap()).expect("write to string");
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_derived(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let schema: Vec<String> = header
        .iter()
        .filter(|h| *h != LABEL_COLUMN && *h != ID_COLUMN)
        .cloned()
        .collect();
    let mut rows = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let fields = result?;
        let mut values = Vec::with_capacity(schema.len());
        let mut label = None;
        for (col, field) in fields.iter().enumerate() {
            if header[col] == ID_COLUMN {
                continue;
            }
            let v = match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::Parse {
                        row,
                        column: header[col].clone(),
                        message: format!("invalid value `{field}`"),
                    })
                }
            };
            if Some(col) == label_col {
                label = Some(v);
            } else {
                values.push(v);
            }
        }
        rows.push(FeatureVector { values, label });
    }
    Dataset::new(schema, rows)
}

fn first_line(path: &Path) -> Result<String> {
    use std::io::BufRead;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    Ok(line)
}

/// Whether the file at `path` is a raw radar table (has a `TimeToEnd` column).
pub fn is_raw_table(path: &Path) -> Result<bool> {
    Ok(first_line(path)?
        .trim_end()
        .split(',')
        .any(|h| h.trim().trim_matches('"') == TIME_TO_END))
}

/// An input table, raw or already derived.
#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Raw(RawDataset),
    Derived(Dataset),
}

impl Table {
    /// Detects the format from the header: raw tables carry `TimeToEnd`.
    pub fn load(path: &Path) -> Result<Self> {
        if is_raw_table(path)? {
            let has_labels = first_line(path)?
                .split(',')
                .any(|h| h.trim().trim_matches('"') == LABEL_COLUMN);
            Ok(Table::Raw(parse_dataset(path, has_labels)?))
        } else {
            Ok(Table::Derived(read_derived(path)?))
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Table::Raw(r) => r.len(),
            Table::Derived(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Derived features under `policy`. Derived tables only lose the
    /// policy's dropped columns; they cannot regain columns dropped earlier.
    pub fn features(&self, policy: &MissingDataPolicy) -> Dataset {
        match self {
            Table::Raw(raw) => derive_dataset(raw, policy),
            Table::Derived(data) => {
                let keep: Vec<usize> = (0..data.dim())
                    .filter(|&j| policy.keeps(&data.schema[j]))
                    .collect();
                Dataset {
                    schema: keep.iter().map(|&j| data.schema[j].clone()).collect(),
                    rows: data
                        .rows
                        .iter()
                        .map(|r| FeatureVector {
                            values: keep.iter().map(|&j| r.values[j]).collect(),
                            label: r.label,
                        })
                        .collect(),
                }
            }
        }
    }
}

/// Loads derived features from either a raw table (deriving under `policy`)
/// or an already derived table.
pub fn load_features(path: &Path, policy: &MissingDataPolicy) -> Result<Dataset> {
    Ok(Table::load(path)?.features(policy))
}

/// Reads the `Expected` column of any raw or derived table.
pub fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == LABEL_COLUMN)
        .ok_or_else(|| Error::Schema(format!("missing required column `{LABEL_COLUMN}`")))?;
    let mut labels = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let fields = result?;
        let text = fields.get(col).unwrap_or("").trim();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => labels.push(v),
            _ => {
                return Err(Error::Parse {
                    row,
                    column: LABEL_COLUMN.into(),
                    message: format!("invalid label `{text}`"),
                })
            }
        }
    }
    Ok(labels)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Channels emitted by the generator besides `TimeToEnd` and the rain rates.
pub const SYNTHETIC_CHANNELS: [&str; 3] = ["Reflectivity", "Channel1", "Channel2"];

const RR2_MISSING: f64 = 0.35;
const RR3_MISSING: f64 = 0.5;
const REFLECTIVITY_NAN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub rows: usize,
    /// Probability of a zero-rain hour.
    pub p0: f64,
    /// Mean of the exponential positive-label tail, in mm.
    pub label_mean: f64,
    /// Log-scale noise of each rain-rate estimator.
    pub rr1_noise: f64,
    pub rr2_noise: f64,
    pub rr3_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rows: 10_000,
            p0: 0.8764,
            label_mean: 2.5,
            rr1_noise: 0.3,
            rr2_noise: 0.8,
            rr3_noise: 1.2,
        }
    }
}

impl SyntheticConfig {
    pub fn with_rows(rows: usize) -> Self {
        SyntheticConfig {
            rows,
            ..Default::default()
        }
    }

    /// Reads `key = value` lines; unspecified keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let config: SyntheticConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::Config("rows must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::Config(format!("p0 = {} outside [0, 1]", self.p0)));
        }
        if !(self.label_mean > 0.0 && self.label_mean.is_finite()) {
            return Err(Error::Config("label_mean must be positive".into()));
        }
        for (name, v) in [
            ("rr1_noise", self.rr1_noise),
            ("rr2_noise", self.rr2_noise),
            ("rr3_noise", self.rr3_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Noisy rain-rate estimate of an hourly total: a log-normal multiple of the
/// label plus clipped additive clutter.
fn rain_rate<R: Rng>(rng: &mut R, label: f64, noise: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let clutter: f64 = rng.sample(StandardNormal);
    let mult = (noise * z - 0.5 * noise * noise).exp();
    round2((label * mult + 0.5 * noise * clutter).max(0.0))
}

/// Zero-inflated synthetic radar table, deterministic in `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<RawDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail = Exp::new(1.0 / config.label_mean).map_err(|e| Error::Config(e.to_string()))?;

    let schema: Vec<String> = std::iter::once(TIME_TO_END)
        .chain(SYNTHETIC_CHANNELS)
        .chain([RR1, RR2, RR3])
        .map(String::from)
        .collect();

    let mut records = Vec::with_capacity(config.rows);
    for id in 0..config.rows {
        let label = if rng.random::<f64>() < config.p0 {
            0.0
        } else {
            round2(tail.sample(&mut rng).min(69.0))
        };

        let n_scans = rng.random_range(1..=8usize);
        let mut times = Vec::with_capacity(n_scans);
        let mut t = rng.random_range(45..=60i32);
        for _ in 0..n_scans {
            if t < 0 {
                break;
            }
            times.push(t as f64);
            t -= rng.random_range(2..=7i32);
        }

        let mut cells = BTreeMap::new();
        cells.insert(
            TIME_TO_END.to_string(),
            TimeSeriesCell {
                values: times.clone(),
                times: times.clone(),
            },
        );

        let mut refl = TimeSeriesCell::default();
        let mut ch1 = TimeSeriesCell::default();
        let mut ch2 = TimeSeriesCell::default();
        let mut rr = [
            TimeSeriesCell::default(),
            TimeSeriesCell::default(),
            TimeSeriesCell::default(),
        ];
        let rr2_missing = rng.random::<f64>() < RR2_MISSING;
        let rr3_missing = rng.random::<f64>() < RR3_MISSING;
        let noises = [config.rr1_noise, config.rr2_noise, config.rr3_noise];
        for &t in &times {
            let z: f64 = rng.sample(StandardNormal);
            let dbz = if label > 0.0 {
                // Z = 200 R^1.6 with jitter in the rate.
                let r = label * (0.3 * z).exp();
                10.0 * (200.0 * r.powf(1.6)).log10()
            } else {
                5.0 + 5.0 * z
            };
            if rng.random::<f64>() >= REFLECTIVITY_NAN {
                refl.values.push(round2(dbz));
                refl.times.push(t);
            }
            let c1: f64 = rng.sample(StandardNormal);
            ch1.values.push(round2(c1));
            ch1.times.push(t);
            ch2.values.push(round2(rng.random_range(0.0..10.0)));
            ch2.times.push(t);
            for (cell, &noise) in rr.iter_mut().zip(&noises) {
                cell.values.push(rain_rate(&mut rng, label, noise));
                cell.times.push(t);
            }
        }
        let [rr1, mut rr2, mut rr3] = rr;
        if rr2_missing {
            rr2 = TimeSeriesCell::default();
        }
        if rr3_missing {
            rr3 = TimeSeriesCell::default();
        }
        for (name, cell) in SYNTHETIC_CHANNELS
            .iter()
            .zip([refl, ch1, ch2])
            .chain([(&RR1, rr1), (&RR2, rr2), (&RR3, rr3)])
        {
            cells.insert(name.to_string(), cell);
        }

        records.push(RawRecord {
            id,
            cells,
            label: Some(label),
        });
    }
    Ok(RawDataset { schema, records })
}

// ---------------------------------------------------------------------------
// Splits

/// Seeded permutation of `0..m`.
pub fn shuffled_indices(m: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Disjoint random train/validation index sets.
pub fn split_indices(
    m: usize,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train.checked_add(n_val).is_none_or(|n| n > m) {
        return Err(Error::Size(format!(
            "cannot take {n_train} + {n_val} rows from {m}"
        )));
    }
    let idx = shuffled_indices(m, seed);
    Ok((
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
    ))
}

pub fn split(data: &Dataset, n_train: usize, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(data.len(), n_train, n_val, seed)?;
    Ok((data.subset(&train), data.subset(&val)))
}

pub fn split_raw(
    data: &RawDataset,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(RawDataset, RawDataset)> {
    let (train, val) = split_indices(data.len(), n_train, n_val, seed)?;
    Ok((data.subset(&train), data.subset(&val)))
}
