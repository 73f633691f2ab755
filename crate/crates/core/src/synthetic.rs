//! Seeded generator of RAN-like KPI series with injected, labelled anomaly
//! patterns.
//!
//! Each KPI follows `level + amplitude * sin(2π · time_of_day)` plus Gaussian
//! noise. Patterns shift selected KPIs up or down for a number of intervals
//! at randomly placed, non-overlapping positions; every placement is
//! recorded as ground truth.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, parse_timestamp, Dataset};
use crate::domain::{KpiRecord, Timestamp};

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("cannot place occurrence {occurrence} of pattern `{pattern_id}`: not enough free room in the horizon")]
    Infeasible { pattern_id: String, occurrence: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("ground truth line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiBaseline {
    pub name: String,
    pub level: f64,
    /// Daily-cycle amplitude; defaults to 20% of `level`.
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub noise_std: f64,
}

impl KpiBaseline {
    pub fn new(name: impl Into<String>, level: f64, noise_std: f64) -> Self {
        Self {
            name: name.into(),
            level,
            amplitude: None,
            noise_std,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude.unwrap_or(0.2 * self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnitude {
    /// Additive shift of this many noise standard deviations.
    Sigma(f64),
    /// Multiplicative factor (divides for `down`).
    Ratio(f64),
    /// Additive shift in KPI units.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedPattern {
    pub pattern_id: String,
    pub directions: Vec<Direction>,
    pub magnitude: Magnitude,
    /// Length of each occurrence in intervals.
    pub duration: u32,
    pub occurrences: u32,
}

fn default_interval() -> Duration {
    Duration::from_secs(15 * 60)
}

fn default_start() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn default_separation() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_cells: usize,
    pub n_regions: usize,
    pub kpis: Vec<KpiBaseline>,
    #[serde(with = "humantime_serde", default = "default_interval")]
    pub interval: Duration,
    pub days: u32,
    #[serde(default = "default_start")]
    pub start: Timestamp,
    #[serde(default)]
    pub patterns: Vec<InjectedPattern>,
    pub seed: u64,
    /// Minimum number of clean intervals between two injections in a cell.
    #[serde(default = "default_separation")]
    pub separation: u32,
}

impl ScenarioSpec {
    pub fn n_kpis(&self) -> usize {
        self.kpis.len()
    }

    pub fn slots(&self) -> usize {
        (self.days as u64 * 86_400 / self.interval.as_secs().max(1)) as usize
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidSpec(m));
        if self.n_cells == 0 || self.n_regions == 0 || self.kpis.is_empty() || self.days == 0 {
            return bad("cell, region, KPI and day counts must be at least 1".into());
        }
        if self.interval.as_secs() == 0 || 86_400 % self.interval.as_secs() != 0 {
            return bad("interval must be a whole number of seconds dividing one day".into());
        }
        for k in &self.kpis {
            if !(k.noise_std >= 0.0) || !k.level.is_finite() || !k.amplitude().is_finite() {
                return bad(format!(
                    "KPI `{}`: level/amplitude must be finite and noise_std >= 0",
                    k.name
                ));
            }
        }
        for p in &self.patterns {
            if p.directions.len() != self.kpis.len() {
                return bad(format!(
                    "pattern `{}` has {} directions for {} KPIs",
                    p.pattern_id,
                    p.directions.len(),
                    self.kpis.len()
                ));
            }
            if p.directions.iter().all(|d| *d == Direction::Flat) {
                return bad(format!(
                    "pattern `{}` needs at least one non-flat direction",
                    p.pattern_id
                ));
            }
            if p.occurrences == 0 || p.duration == 0 {
                return bad(format!(
                    "pattern `{}`: occurrences and duration must be >= 1",
                    p.pattern_id
                ));
            }
            match p.magnitude {
                Magnitude::Ratio(r) if !(r > 0.0) => {
                    return bad(format!("pattern `{}`: ratio must be positive", p.pattern_id));
                }
                Magnitude::Sigma(_) => {
                    let silent = p
                        .directions
                        .iter()
                        .zip(&self.kpis)
                        .any(|(d, k)| *d != Direction::Flat && k.noise_std == 0.0);
                    if silent {
                        return bad(format!(
                            "pattern `{}`: sigma magnitude on a noiseless KPI shifts nothing",
                            p.pattern_id
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Reads a scenario from TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| SyntheticError::Format(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| SyntheticError::Format(e.to_string()))
        }
    }

    pub fn cell_id(&self, i: usize) -> String {
        let width = self.n_cells.to_string().len().max(3);
        format!("cell-{i:0width$}")
    }

    pub fn region_id(&self, cell: usize) -> String {
        format!("region-{}", cell % self.n_regions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pattern_id: String,
    pub cell_id: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
}

/// Generates the dataset and the list of injected occurrences.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, Vec<GroundTruth>), SyntheticError> {
    spec.validate()?;
    let slots = spec.slots();
    let sep = spec.separation as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let needed: usize = spec
        .patterns
        .iter()
        .map(|p| p.occurrences as usize * (p.duration as usize + sep))
        .sum();
    if let Some(p) = spec.patterns.first() {
        if needed > spec.n_cells * (slots + sep) {
            return Err(SyntheticError::Infeasible {
                pattern_id: p.pattern_id.clone(),
                occurrence: 0,
            });
        }
    }

    // placement: per cell, the pattern index occupying each slot
    let mut occupancy: Vec<Vec<Option<usize>>> = vec![vec![None; slots]; spec.n_cells];
    let mut placements: Vec<(usize, usize, usize)> = Vec::new();
    for (pi, p) in spec.patterns.iter().enumerate() {
        let dur = p.duration as usize;
        for occ in 0..p.occurrences {
            let mut placed = false;
            if dur <= slots {
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let cell = rng.random_range(0..spec.n_cells);
                    let start = rng.random_range(0..=slots - dur);
                    let lo = start.saturating_sub(sep);
                    let hi = (start + dur + sep).min(slots);
                    if occupancy[cell][lo..hi].iter().all(Option::is_none) {
                        occupancy[cell][start..start + dur].fill(Some(pi));
                        placements.push((pi, cell, start));
                        placed = true;
                        break;
                    }
                }
            }
            if !placed {
                return Err(SyntheticError::Infeasible {
                    pattern_id: p.pattern_id.clone(),
                    occurrence: occ,
                });
            }
        }
    }

    let step = chrono::Duration::from_std(spec.interval).expect("interval fits");
    let noise: Vec<Option<Normal<f64>>> = spec
        .kpis
        .iter()
        .map(|k| (k.noise_std > 0.0).then(|| Normal::new(0.0, k.noise_std).expect("valid std")))
        .collect();
    let cells: Vec<(String, String)> = (0..spec.n_cells)
        .map(|c| (spec.cell_id(c), spec.region_id(c)))
        .collect();
    let mut records = Vec::with_capacity(slots * spec.n_cells);
    for slot in 0..slots {
        let timestamp = spec.start + step * slot as i32;
        let day_phase = (timestamp.timestamp().rem_euclid(86_400)) as f64 / 86_400.0;
        let cycle = (2.0 * std::f64::consts::PI * day_phase).sin();
        for (c, (cell_id, region_id)) in cells.iter().enumerate() {
            let pattern = occupancy[c][slot].map(|pi| &spec.patterns[pi]);
            let values = spec
                .kpis
                .iter()
                .enumerate()
                .map(|(k, kpi)| {
                    let mut v = kpi.level + kpi.amplitude() * cycle;
                    if let Some(n) = &noise[k] {
                        v += n.sample(&mut rng);
                    }
                    if let Some(p) = pattern {
                        v = inject(v, p.directions[k], p.magnitude, kpi.noise_std);
                    }
                    Some(v)
                })
                .collect();
            records.push(KpiRecord {
                timestamp,
                cell_id: cell_id.clone(),
                region_id: region_id.clone(),
                values,
            });
        }
    }

    let mut truth: Vec<GroundTruth> = placements
        .into_iter()
        .map(|(pi, cell, start)| {
            let p = &spec.patterns[pi];
            let t_start = spec.start + step * start as i32;
            GroundTruth {
                pattern_id: p.pattern_id.clone(),
                cell_id: cells[cell].0.clone(),
                t_start,
                t_end: t_start + step * (p.duration as i32 - 1),
            }
        })
        .collect();
    truth.sort_by(|a, b| a.t_start.cmp(&b.t_start).then_with(|| a.cell_id.cmp(&b.cell_id)));

    let fields = spec.kpis.iter().map(|k| k.name.clone()).collect();
    Ok((Dataset::new(fields, records), truth))
}

fn inject(v: f64, direction: Direction, magnitude: Magnitude, noise_std: f64) -> f64 {
    let sign = match direction {
        Direction::Up => 1.0,
        Direction::Down => -1.0,
        Direction::Flat => return v,
    };
    match magnitude {
        Magnitude::Sigma(k) => v + sign * k * noise_std,
        Magnitude::Absolute(a) => v + sign * a,
        Magnitude::Ratio(r) if sign > 0.0 => v * r,
        Magnitude::Ratio(r) => v / r,
    }
}

pub fn write_ground_truth<W: Write>(truth: &[GroundTruth], writer: W) -> Result<(), SyntheticError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pattern_id", "cell_id", "t_start", "t_end"])?;
    for g in truth {
        w.write_record([
            g.pattern_id.as_str(),
            g.cell_id.as_str(),
            &format_timestamp(g.t_start),
            &format_timestamp(g.t_end),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<GroundTruth>, SyntheticError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != 4 {
            return Err(SyntheticError::Parse {
                line,
                message: "expected 4 columns".into(),
            });
        }
        let parse = |s: &str| parse_timestamp(s).map_err(|message| SyntheticError::Parse { line, message });
        out.push(GroundTruth {
            pattern_id: row[0].to_owned(),
            cell_id: row[1].to_owned(),
            t_start: parse(&row[2])?,
            t_end: parse(&row[3])?,
        });
    }
    Ok(out)
}
