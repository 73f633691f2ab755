//! Boundary to upstream outlier detectors plus a robust z-score baseline.
//!
//! External detectors hand over their verdicts as an outlier index CSV with
//! header `cell_id,timestamp`. The baseline flags a record when any KPI lies
//! more than `z` median absolute deviations from its context median.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, parse_timestamp, Dataset};
use crate::domain::{KpiRecord, Timestamp};
use crate::reference::ReferenceTable;

/// Guards the robust z-score against a zero MAD.
pub const MAD_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("outlier index header must be `cell_id,timestamp`, got `{0}`")]
    BadHeader(String),
    #[error("outlier index line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{} outlier index entries do not match any dataset row (first: {})", .0.len(), .0.first().map(|(c, t)| format!("{c}@{t}")).unwrap_or_default())]
    Dangling(Vec<(String, Timestamp)>),
    #[error("z threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// Set of `(cell_id, timestamp)` pairs flagged by a detector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutlierIndex {
    pub entries: BTreeSet<(String, Timestamp)>,
    pub source: String,
    pub threshold_used: f64,
}

impl OutlierIndex {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Timestamp)>,
        source: impl Into<String>,
        threshold_used: f64,
    ) -> Self {
        Self {
            entries: entries.into_iter().collect(),
            source: source.into(),
            threshold_used,
        }
    }

    pub fn contains(&self, cell_id: &str, t: Timestamp) -> bool {
        // BTreeSet<(String, _)> cannot be probed with a borrowed &str tuple
        self.entries.contains(&(cell_id.to_owned(), t))
    }

    pub fn insert(&mut self, cell_id: &str, t: Timestamp) -> bool {
        self.entries.insert((cell_id.to_owned(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lists the entries that reference no row of `dataset`.
    pub fn dangling(&self, dataset: &Dataset) -> Vec<(String, Timestamp)> {
        let rows: BTreeSet<(&str, Timestamp)> = dataset
            .records
            .iter()
            .map(|r| (r.cell_id.as_str(), r.timestamp))
            .collect();
        self.entries
            .iter()
            .filter(|(c, t)| !rows.contains(&(c.as_str(), *t)))
            .cloned()
            .collect()
    }

    pub fn validate_against(&self, dataset: &Dataset) -> Result<(), DetectorError> {
        let dangling = self.dangling(dataset);
        if dangling.is_empty() {
            Ok(())
        } else {
            Err(DetectorError::Dangling(dangling))
        }
    }

    /// Flagged rows of `dataset`, in dataset order.
    pub fn select<'a>(&self, dataset: &'a Dataset) -> Vec<&'a KpiRecord> {
        dataset
            .records
            .iter()
            .filter(|r| self.contains(&r.cell_id, r.timestamp))
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<Self, DetectorError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["cell_id", "timestamp"] {
            return Err(DetectorError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut index = OutlierIndex {
            source: source.to_owned(),
            ..Default::default()
        };
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| DetectorError::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.len() != 2 || row[0].is_empty() {
                return Err(DetectorError::Parse {
                    line,
                    message: "expected `cell_id,timestamp`".into(),
                });
            }
            let t = parse_timestamp(&row[1]).map_err(|message| DetectorError::Parse { line, message })?;
            index.entries.insert((row[0].to_owned(), t));
        }
        Ok(index)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DetectorError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell_id", "timestamp"])?;
        for (c, t) in &self.entries {
            w.write_record([c.as_str(), format_timestamp(*t).as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads an externally produced outlier index.
pub fn load_outlier_index(path: &Path) -> Result<OutlierIndex, DetectorError> {
    let file = std::fs::File::open(path)?;
    OutlierIndex::read_csv(std::io::BufReader::new(file), &format!("external:{}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub records_scanned: usize,
    pub flagged: usize,
    /// Records skipped because a KPI's context had no reference entry.
    pub skipped_missing_context: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Outlier,
    Normal,
    /// No reference entry for at least one non-missing KPI of the record.
    MissingContext,
}

/// Robust z-score test of one record against the snapshot's medians and MADs.
pub fn score_record(record: &KpiRecord, fields: &[String], table: &ReferenceTable, z: f64) -> Verdict {
    let mut flagged = false;
    for (kpi, value) in fields.iter().zip(&record.values) {
        let Some(x) = value else { continue };
        let Some(entry) = table.get(kpi, &record.cell_id, &record.region_id) else {
            return Verdict::MissingContext;
        };
        if (x - entry.median).abs() / (entry.mad + MAD_EPSILON) > z {
            flagged = true;
        }
    }
    if flagged {
        Verdict::Outlier
    } else {
        Verdict::Normal
    }
}

/// Flags every record with at least one KPI beyond `z` robust deviations.
pub fn baseline_detect(
    dataset: &Dataset,
    table: &ReferenceTable,
    z: f64,
) -> Result<(OutlierIndex, DetectionSummary), DetectorError> {
    if !(z > 0.0) {
        return Err(DetectorError::InvalidThreshold(z));
    }
    let mut index = OutlierIndex {
        source: "baseline-robust-z".into(),
        threshold_used: z,
        ..Default::default()
    };
    let mut summary = DetectionSummary::default();
    for record in &dataset.records {
        summary.records_scanned += 1;
        match score_record(record, &dataset.fields, table, z) {
            Verdict::Outlier => {
                index.insert(&record.cell_id, record.timestamp);
            }
            Verdict::Normal => {}
            Verdict::MissingContext => summary.skipped_missing_context += 1,
        }
    }
    summary.flagged = index.len();
    Ok((index, summary))
}
