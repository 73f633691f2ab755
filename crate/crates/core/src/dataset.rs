//! KPI datasets and their CSV form:
//! `timestamp,region_id,cell_id,<kpi1>,<kpi2>,...`, ISO-8601 UTC timestamps,
//! an empty cell meaning a missing value.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::domain::{KpiRecord, TimeWindow, Timestamp};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must start with `timestamp,region_id,cell_id`, got `{0}`")]
    BadHeader(String),
    #[error("dataset has KPI column `{0}` that is not in the field schema")]
    UnknownColumn(String),
    #[error("field `{0}` has no column in the dataset")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("record {cell_id}@{timestamp} is not aligned to the {interval_secs}s interval")]
    Misaligned {
        cell_id: String,
        timestamp: Timestamp,
        interval_secs: u64,
    },
}

/// Timestamped multivariate KPI rows, values ordered by `fields`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub fields: Vec<String>,
    pub records: Vec<KpiRecord>,
}

impl Dataset {
    pub fn new(fields: Vec<String>, records: Vec<KpiRecord>) -> Self {
        Self { fields, records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Smallest window that covers every record, assuming the last record
    /// spans one `interval`.
    pub fn span(&self, interval: Duration) -> Option<TimeWindow> {
        let start = self.records.iter().map(|r| r.timestamp).min()?;
        let last = self.records.iter().map(|r| r.timestamp).max()?;
        let step = chrono::Duration::from_std(interval).ok()?;
        TimeWindow::new(start, last + step)
    }

    pub fn check_alignment(&self, interval: Duration) -> Result<(), DatasetError> {
        let secs = interval.as_secs().max(1);
        for r in &self.records {
            let ts = r.timestamp.timestamp();
            if r.timestamp.timestamp_subsec_nanos() != 0 || ts.rem_euclid(secs as i64) != 0 {
                return Err(DatasetError::Misaligned {
                    cell_id: r.cell_id.clone(),
                    timestamp: r.timestamp,
                    interval_secs: secs,
                });
            }
        }
        Ok(())
    }

    /// Records sorted by `(timestamp, cell_id)`, the order a live feed
    /// would deliver them in.
    pub fn chronological(&self) -> Vec<&KpiRecord> {
        let mut rows: Vec<&KpiRecord> = self.records.iter().collect();
        rows.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cell_id.cmp(&b.cell_id)));
        rows
    }

    /// Reads a dataset, mapping KPI columns onto `schema_fields` by name.
    /// When `schema_fields` is `None` the CSV column order is taken as is.
    pub fn read_csv<R: Read>(reader: R, schema_fields: Option<&[String]>) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 4 || cols[0] != "timestamp" || cols[1] != "region_id" || cols[2] != "cell_id" {
            return Err(DatasetError::BadHeader(cols.join(",")));
        }
        let csv_kpis: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let fields: Vec<String> = match schema_fields {
            Some(f) => f.to_vec(),
            None => csv_kpis.clone(),
        };
        // column position in the CSV for each field in schema order
        let mut column_of = Vec::with_capacity(fields.len());
        for f in &fields {
            let pos = csv_kpis
                .iter()
                .position(|c| c == f)
                .ok_or_else(|| DatasetError::MissingColumn(f.clone()))?;
            column_of.push(pos + 3);
        }
        if let Some(extra) = csv_kpis.iter().find(|c| !fields.contains(c)) {
            return Err(DatasetError::UnknownColumn(extra.clone()));
        }

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let row = row.map_err(|e| DatasetError::Row {
                row: line,
                message: e.to_string(),
            })?;
            if row.len() != cols.len() {
                return Err(DatasetError::Row {
                    row: line,
                    message: format!("expected {} columns, found {}", cols.len(), row.len()),
                });
            }
            let timestamp = parse_timestamp(&row[0]).map_err(|message| DatasetError::Row { row: line, message })?;
            let mut values = Vec::with_capacity(fields.len());
            for (f, &col) in fields.iter().zip(&column_of) {
                let raw = &row[col];
                if raw.is_empty() {
                    values.push(None);
                } else {
                    let v: f64 = raw.parse().map_err(|_| DatasetError::Row {
                        row: line,
                        message: format!("field `{f}`: `{raw}` is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(DatasetError::Row {
                            row: line,
                            message: format!("field `{f}`: value must be finite"),
                        });
                    }
                    values.push(Some(v));
                }
            }
            records.push(KpiRecord {
                timestamp,
                region_id: row[1].to_owned(),
                cell_id: row[2].to_owned(),
                values,
            });
        }
        Ok(Self { fields, records })
    }

    pub fn load(path: &Path, schema_fields: Option<&[String]>) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), schema_fields)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_owned(), "region_id".to_owned(), "cell_id".to_owned()];
        header.extend(self.fields.iter().cloned());
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for r in &self.records {
            row.clear();
            row.push(format_timestamp(r.timestamp));
            row.push(r.region_id.clone());
            row.push(r.cell_id.clone());
            for v in &r.values {
                row.push(v.map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("invalid timestamp `{s}`: {e}"))
}

pub fn format_timestamp(t: Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}
