//! Collation of consecutive outlier records into single occurrences.
//!
//! Two outliers of the same cell are consecutive when the gap between them
//! does not exceed `min_interval` (inclusive). Batch collation serves
//! training; [`Collator`] is the streaming form used in production, with
//! delayed (emit on close) or eager (emit a snapshot per outlier) notification.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Aggregation, CollatedOutlier, FieldSchema, KpiRecord, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum CollationError {
    #[error("records for cell `{cell_id}` are not sorted: {timestamp} follows {previous}")]
    Unsorted {
        cell_id: String,
        previous: Timestamp,
        timestamp: Timestamp,
    },
    #[error("time regression for cell `{cell_id}`: {timestamp} is earlier than {last}")]
    TimeRegression {
        cell_id: String,
        last: Timestamp,
        timestamp: Timestamp,
    },
    #[error("record has {got} values but the schema has {expected} fields")]
    Arity { expected: usize, got: usize },
    #[error("min_interval must be positive")]
    ZeroInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NotificationMode {
    #[default]
    Delayed,
    Eager,
}

impl std::str::FromStr for NotificationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delayed" => Ok(Self::Delayed),
            "eager" => Ok(Self::Eager),
            other => Err(format!("unknown notification mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollationConfig {
    #[serde(with = "humantime_serde", default = "CollationConfig::default_interval")]
    pub min_interval: Duration,
    #[serde(default)]
    pub mode: NotificationMode,
}

impl CollationConfig {
    fn default_interval() -> Duration {
        Duration::from_secs(15 * 60)
    }

    pub fn validate(&self) -> Result<(), CollationError> {
        if self.min_interval.is_zero() {
            return Err(CollationError::ZeroInterval);
        }
        Ok(())
    }

    fn max_gap(&self) -> chrono::Duration {
        chrono::Duration::from_std(self.min_interval).unwrap_or(chrono::Duration::MAX)
    }
}

impl Default for CollationConfig {
    fn default() -> Self {
        Self {
            min_interval: Self::default_interval(),
            mode: NotificationMode::Delayed,
        }
    }
}

/// Running aggregate of one field; missing values are ignored.
#[derive(Debug, Clone, PartialEq)]
struct FieldAggregate {
    agg: Aggregation,
    seen: u32,
    value: Option<f64>,
}

impl FieldAggregate {
    fn new(agg: Aggregation) -> Self {
        Self {
            agg,
            seen: 0,
            value: None,
        }
    }

    fn add(&mut self, x: Option<f64>) {
        let Some(x) = x else { return };
        self.seen += 1;
        self.value = Some(match (self.value, self.agg) {
            (None, _) => x,
            // incremental mean keeps snapshots O(1)
            (Some(m), Aggregation::Mean) => m + (x - m) / self.seen as f64,
            (Some(m), Aggregation::Max) => m.max(x),
            (Some(m), Aggregation::Min) => m.min(x),
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
struct OpenGroup {
    region_id: String,
    t_start: Timestamp,
    last_t: Timestamp,
    fields: Vec<FieldAggregate>,
    duration: u32,
}

impl OpenGroup {
    fn start(record: &KpiRecord, aggs: &[Aggregation]) -> Self {
        let mut g = Self {
            region_id: record.region_id.clone(),
            t_start: record.timestamp,
            last_t: record.timestamp,
            fields: aggs.iter().map(|a| FieldAggregate::new(*a)).collect(),
            duration: 0,
        };
        g.extend(record);
        g
    }

    fn extend(&mut self, record: &KpiRecord) {
        self.last_t = record.timestamp;
        self.duration += 1;
        for (f, v) in self.fields.iter_mut().zip(&record.values) {
            f.add(*v);
        }
    }

    fn snapshot(&self, cell_id: &str) -> CollatedOutlier {
        CollatedOutlier {
            cell_id: cell_id.to_owned(),
            region_id: self.region_id.clone(),
            t_start: self.t_start,
            t_end: self.last_t,
            aggregated: self.fields.iter().map(|f| f.value).collect(),
            duration: self.duration,
        }
    }
}

fn aggregations(schema: &FieldSchema) -> Vec<Aggregation> {
    schema.fields.iter().map(|f| f.agg).collect()
}

/// Collates flagged records, which must be time-ordered within each cell.
/// Output is ordered by `(t_start, cell_id)`.
pub fn collate_batch(
    records: &[KpiRecord],
    schema: &FieldSchema,
    cfg: &CollationConfig,
) -> Result<Vec<CollatedOutlier>, CollationError> {
    cfg.validate()?;
    let aggs = aggregations(schema);
    let max_gap = cfg.max_gap();
    let mut open: BTreeMap<&str, OpenGroup> = BTreeMap::new();
    let mut out = Vec::new();
    for record in records {
        if record.values.len() != aggs.len() {
            return Err(CollationError::Arity {
                expected: aggs.len(),
                got: record.values.len(),
            });
        }
        match open.get_mut(record.cell_id.as_str()) {
            Some(g) if record.timestamp < g.last_t => {
                return Err(CollationError::Unsorted {
                    cell_id: record.cell_id.clone(),
                    previous: g.last_t,
                    timestamp: record.timestamp,
                });
            }
            Some(g) if record.timestamp - g.last_t <= max_gap => g.extend(record),
            Some(g) => {
                out.push(g.snapshot(&record.cell_id));
                *g = OpenGroup::start(record, &aggs);
            }
            None => {
                open.insert(&record.cell_id, OpenGroup::start(record, &aggs));
            }
        }
    }
    out.extend(open.iter().map(|(cell, g)| g.snapshot(cell)));
    sort_occurrences(&mut out);
    Ok(out)
}

pub fn sort_occurrences(out: &mut [CollatedOutlier]) {
    out.sort_by(|a, b| a.t_start.cmp(&b.t_start).then_with(|| a.cell_id.cmp(&b.cell_id)));
}

/// What a single streaming step produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Emission {
    /// Groups that closed during this step.
    pub closed: Vec<CollatedOutlier>,
    /// Eager mode only: the running snapshot of the group the record joined.
    pub snapshot: Option<CollatedOutlier>,
}

impl Emission {
    /// Occurrences to notify on under `mode`.
    pub fn notifications(&self, mode: NotificationMode) -> Vec<&CollatedOutlier> {
        match mode {
            NotificationMode::Delayed => self.closed.iter().collect(),
            NotificationMode::Eager => self.snapshot.iter().collect(),
        }
    }
}

/// Streaming collator. Owns at most one open group per cell and no timer:
/// callers advance time through `push` and `tick`.
#[derive(Debug, Clone)]
pub struct Collator {
    cfg: CollationConfig,
    aggs: Vec<Aggregation>,
    open: BTreeMap<String, OpenGroup>,
    last_seen: HashMap<String, Timestamp>,
}

impl Collator {
    pub fn new(schema: &FieldSchema, cfg: CollationConfig) -> Result<Self, CollationError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            aggs: aggregations(schema),
            open: BTreeMap::new(),
            last_seen: HashMap::new(),
        })
    }

    pub fn config(&self) -> &CollationConfig {
        &self.cfg
    }

    pub fn open_groups(&self) -> usize {
        self.open.len()
    }

    /// Current state of a cell's open group, if any.
    pub fn open_snapshot(&self, cell_id: &str) -> Option<CollatedOutlier> {
        self.open.get(cell_id).map(|g| g.snapshot(cell_id))
    }

    /// Ingests one outlier record observed at `now`, then closes every group
    /// that has been quiet for longer than `min_interval`.
    pub fn push(&mut self, record: &KpiRecord, now: Timestamp) -> Result<Emission, CollationError> {
        if record.values.len() != self.aggs.len() {
            return Err(CollationError::Arity {
                expected: self.aggs.len(),
                got: record.values.len(),
            });
        }
        if let Some(last) = self.last_seen.get(&record.cell_id) {
            if record.timestamp < *last {
                return Err(CollationError::TimeRegression {
                    cell_id: record.cell_id.clone(),
                    last: *last,
                    timestamp: record.timestamp,
                });
            }
        }
        self.last_seen.insert(record.cell_id.clone(), record.timestamp);

        let max_gap = self.cfg.max_gap();
        let mut emission = Emission::default();
        match self.open.get_mut(&record.cell_id) {
            Some(g) if record.timestamp - g.last_t <= max_gap => g.extend(record),
            Some(g) => {
                emission.closed.push(g.snapshot(&record.cell_id));
                *g = OpenGroup::start(record, &self.aggs);
            }
            None => {
                self.open
                    .insert(record.cell_id.clone(), OpenGroup::start(record, &self.aggs));
            }
        }
        if self.cfg.mode == NotificationMode::Eager {
            emission.snapshot = self.open_snapshot(&record.cell_id);
        }
        emission.closed.extend(self.tick(now));
        Ok(emission)
    }

    /// Closes groups whose last outlier is more than `min_interval` before `now`.
    pub fn tick(&mut self, now: Timestamp) -> Vec<CollatedOutlier> {
        let max_gap = self.cfg.max_gap();
        let expired: Vec<String> = self
            .open
            .iter()
            .filter(|(_, g)| now - g.last_t > max_gap)
            .map(|(c, _)| c.clone())
            .collect();
        let mut closed: Vec<CollatedOutlier> = expired
            .into_iter()
            .map(|c| {
                let g = self.open.remove(&c).expect("expired group is open");
                g.snapshot(&c)
            })
            .collect();
        sort_occurrences(&mut closed);
        closed
    }

    /// Closes every open group regardless of time, e.g. at end of a replay.
    pub fn flush(&mut self) -> Vec<CollatedOutlier> {
        let mut closed: Vec<CollatedOutlier> = std::mem::take(&mut self.open)
            .into_iter()
            .map(|(c, g)| g.snapshot(&c))
            .collect();
        sort_occurrences(&mut closed);
        closed
    }
}
