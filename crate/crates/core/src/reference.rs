//! Per-context reference statistics: the norm every observed value of a
//! collated outlier is compared against, refreshed on a rolling window.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::detector::OutlierIndex;
use crate::domain::{ContextKey, ContextLevel, TimeWindow, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("no records fall in window [{start}, {end})")]
    EmptyWindow { start: Timestamp, end: Timestamp },
    #[error("cannot compute a measure over an empty value list")]
    EmptyValues,
    #[error("refresh time {now} precedes table computation time {computed_at}")]
    TimeRegression { now: Timestamp, computed_at: Timestamp },
    #[error("invalid drift configuration: {0}")]
    InvalidDrift(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Mean,
    #[default]
    Median,
    Mode,
    MeanAboveMedian,
    MeanPlusStd,
}

fn default_mode_digits() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    /// Significant digits values are rounded to before taking the mode.
    #[serde(default = "default_mode_digits")]
    pub mode_digits: u32,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self::new(MeasureKind::Median)
    }
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind) -> Self {
        Self {
            kind,
            mode_digits: default_mode_digits(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftConfig {
    #[serde(with = "humantime_serde", default = "DriftConfig::default_window")]
    pub window_length: Duration,
    #[serde(with = "humantime_serde", default = "DriftConfig::default_period")]
    pub update_period: Duration,
    #[serde(default = "default_true")]
    pub exclude_outliers: bool,
}

fn default_true() -> bool {
    true
}

impl DriftConfig {
    fn default_window() -> Duration {
        Duration::from_secs(30 * 86_400)
    }

    fn default_period() -> Duration {
        Duration::from_secs(86_400)
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        if self.update_period.is_zero() {
            return Err(ReferenceError::InvalidDrift("update_period must be positive".into()));
        }
        if self.window_length < self.update_period {
            return Err(ReferenceError::InvalidDrift(
                "window_length must be at least update_period".into(),
            ));
        }
        Ok(())
    }
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            window_length: Self::default_window(),
            update_period: Self::default_period(),
            exclude_outliers: true,
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(median_sorted(&sorted))
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median absolute deviation around the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = digits.max(1) as i32;
    let magnitude = x.abs().log10().floor() as i32;
    let power = digits - 1 - magnitude;
    // scale in whichever direction keeps the factor exactly representable
    if power >= 0 {
        let f = 10f64.powi(power);
        (x * f).round() / f
    } else {
        let f = 10f64.powi(-power);
        (x / f).round() * f
    }
}

/// Applies a statistical measure to a non-empty value list.
pub fn compute_measure(values: &[f64], spec: MeasureSpec) -> Result<f64, ReferenceError> {
    if values.is_empty() {
        return Err(ReferenceError::EmptyValues);
    }
    let value = match spec.kind {
        MeasureKind::Mean => mean(values),
        MeasureKind::Median => median(values).unwrap(),
        MeasureKind::Mode => {
            let mut rounded: Vec<f64> = values.iter().map(|v| round_significant(*v, spec.mode_digits)).collect();
            rounded.sort_by(f64::total_cmp);
            // ascending scan keeps the smallest value on ties
            let (mut best, mut best_len) = (rounded[0], 0usize);
            let mut i = 0;
            while i < rounded.len() {
                let mut j = i;
                while j < rounded.len() && rounded[j] == rounded[i] {
                    j += 1;
                }
                if j - i > best_len {
                    best = rounded[i];
                    best_len = j - i;
                }
                i = j;
            }
            best
        }
        MeasureKind::MeanAboveMedian => {
            let m = median(values).unwrap();
            let above: Vec<f64> = values.iter().copied().filter(|v| *v > m).collect();
            if above.is_empty() {
                m
            } else {
                mean(&above)
            }
        }
        MeasureKind::MeanPlusStd => {
            let mu = mean(values);
            let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
            mu + var.sqrt()
        }
    };
    Ok(value)
}

/// Groups every in-window value by context key. A key is created for each
/// context that has at least one in-window record, even if all of its
/// values are missing or excluded.
pub fn partition_contexts(
    dataset: &Dataset,
    level: ContextLevel,
    window: TimeWindow,
) -> Result<BTreeMap<ContextKey, Vec<f64>>, ReferenceError> {
    partition_excluding(dataset, level, window, None)
}

fn partition_excluding(
    dataset: &Dataset,
    level: ContextLevel,
    window: TimeWindow,
    exclude: Option<&OutlierIndex>,
) -> Result<BTreeMap<ContextKey, Vec<f64>>, ReferenceError> {
    let mut buckets: BTreeMap<ContextKey, Vec<f64>> = BTreeMap::new();
    let mut seen_any = false;
    for record in dataset.records.iter().filter(|r| window.contains(r.timestamp)) {
        seen_any = true;
        let skip = exclude.is_some_and(|idx| idx.contains(&record.cell_id, record.timestamp));
        for (kpi, value) in dataset.fields.iter().zip(&record.values) {
            let key = ContextKey::for_level(level, kpi, &record.cell_id, &record.region_id);
            let bucket = buckets.entry(key).or_default();
            if let (false, Some(v)) = (skip, value) {
                bucket.push(*v);
            }
        }
    }
    if !seen_any {
        return Err(ReferenceError::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    Ok(buckets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefEntry {
    #[serde(rename = "ref")]
    pub reference: f64,
    pub sample_count: usize,
    /// Robust location and spread of the same samples, used by the
    /// baseline detector.
    pub median: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub level: ContextLevel,
    pub measure: MeasureSpec,
    pub window: TimeWindow,
    pub computed_at: Timestamp,
    pub entries: BTreeMap<ContextKey, RefEntry>,
    /// Contexts present in the window that had no usable samples.
    pub gaps: Vec<ContextKey>,
}

impl ReferenceTable {
    pub fn get(&self, kpi: &str, cell_id: &str, region_id: &str) -> Option<&RefEntry> {
        self.entries
            .get(&ContextKey::for_level(self.level, kpi, cell_id, region_id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reference table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Computes the reference for every context over `window`. Records listed in
/// `exclude` contribute no samples.
pub fn compute_reference_table(
    dataset: &Dataset,
    exclude: Option<&OutlierIndex>,
    level: ContextLevel,
    window: TimeWindow,
    measure: MeasureSpec,
    computed_at: Timestamp,
) -> Result<ReferenceTable, ReferenceError> {
    let buckets = partition_excluding(dataset, level, window, exclude)?;
    let mut entries = BTreeMap::new();
    let mut gaps = Vec::new();
    for (key, values) in buckets {
        if values.is_empty() {
            gaps.push(key);
            continue;
        }
        let entry = RefEntry {
            reference: compute_measure(&values, measure)?,
            sample_count: values.len(),
            median: median(&values).unwrap(),
            mad: mad(&values).unwrap(),
        };
        entries.insert(key, entry);
    }
    Ok(ReferenceTable {
        level,
        measure,
        window,
        computed_at,
        entries,
        gaps,
    })
}

/// Recomputes `table` over `[now - window_length, now)` once `update_period`
/// has elapsed since it was computed; otherwise returns it unchanged.
pub fn update_references(
    table: &ReferenceTable,
    dataset: &Dataset,
    outliers: &OutlierIndex,
    now: Timestamp,
    drift: &DriftConfig,
) -> Result<ReferenceTable, ReferenceError> {
    drift.validate()?;
    if now < table.computed_at {
        return Err(ReferenceError::TimeRegression {
            now,
            computed_at: table.computed_at,
        });
    }
    let period =
        chrono::Duration::from_std(drift.update_period).map_err(|e| ReferenceError::InvalidDrift(e.to_string()))?;
    if now - table.computed_at < period {
        return Ok(table.clone());
    }
    let length =
        chrono::Duration::from_std(drift.window_length).map_err(|e| ReferenceError::InvalidDrift(e.to_string()))?;
    let window = TimeWindow::new(now - length, now).expect("window_length is positive");
    let exclude = drift.exclude_outliers.then_some(outliers);
    compute_reference_table(dataset, exclude, table.level, window, table.measure, now)
}

// Persisted form: {level, window, computed_at, measure, entries:[{kpi, cell?, region?, ref, sample_count, ...}]}
#[derive(Serialize, Deserialize)]
struct TableDoc {
    level: ContextLevel,
    window: TimeWindow,
    computed_at: Timestamp,
    measure: MeasureSpec,
    entries: Vec<EntryDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    gaps: Vec<ContextKey>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    #[serde(flatten)]
    key: ContextKey,
    #[serde(flatten)]
    entry: RefEntry,
}

impl Serialize for ReferenceTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TableDoc {
            level: self.level,
            window: self.window,
            computed_at: self.computed_at,
            measure: self.measure,
            entries: self
                .entries
                .iter()
                .map(|(k, e)| EntryDoc {
                    key: k.clone(),
                    entry: *e,
                })
                .collect(),
            gaps: self.gaps.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReferenceTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = TableDoc::deserialize(d)?;
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            if !e.key.is_valid_for(doc.level) {
                return Err(serde::de::Error::custom(format!(
                    "context key `{}` does not match level {:?}",
                    e.key, doc.level
                )));
            }
            entries.insert(e.key, e.entry);
        }
        Ok(ReferenceTable {
            level: doc.level,
            measure: doc.measure,
            window: doc.window,
            computed_at: doc.computed_at,
            entries,
            gaps: doc.gaps,
        })
    }
}
