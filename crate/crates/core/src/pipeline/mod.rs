//! Wiring of the training phase (detect, reference, collate, generate) and
//! the application phase (match or discover, respond, refresh references).

mod bundle;
mod runtime;
mod train;

pub use bundle::{write_rules, Bundle, Diagnostics, RuleSummary};
pub use runtime::{
    replay, ActionLogSink, ActionRecord, AnomalyEvent, EventOutcome, Flag, MemorySink, ReplayReport, ResponseSink,
    Runtime, RuntimeStats,
};
pub use train::train;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collation::{CollationConfig, CollationError};
use crate::dataset::DatasetError;
use crate::detector::DetectorError;
use crate::domain::{ContextLevel, DomainError, FieldSchema, FieldSpec, Response};
use crate::reference::{DriftConfig, MeasureSpec, ReferenceError};
use crate::rules::{ClassifyConfig, RuleError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("load: {0}")]
    Dataset(#[from] DatasetError),
    #[error("detect: {0}")]
    Detect(#[from] DetectorError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("collate: {0}")]
    Collate(#[from] CollationError),
    #[error("rules: {0}")]
    Rules(#[from] RuleError),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DomainError> for PipelineError {
    fn from(e: DomainError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppraisalConfig {
    /// Counts strictly above this are auto-whitelisted when auto appraisal runs.
    #[serde(default)]
    pub critical_frequency: Option<u64>,
    #[serde(default = "Response::default_alarm")]
    pub default_response: Response,
}

impl Default for AppraisalConfig {
    fn default() -> Self {
        Self {
            critical_frequency: None,
            default_response: Response::default_alarm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Builtin { z: f64 },
    External { path: PathBuf },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Builtin { z: 5.0 }
    }
}

impl DetectorConfig {
    pub fn z(&self) -> Option<f64> {
        match self {
            DetectorConfig::Builtin { z } => Some(*z),
            DetectorConfig::External { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StorageConfig {
    #[serde(default)]
    pub action_log: Option<PathBuf>,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
}

fn default_interval() -> Duration {
    Duration::from_secs(15 * 60)
}

/// The whole run configuration, loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fields: Vec<FieldSpec>,
    /// Base interval records are aligned to.
    #[serde(with = "humantime_serde", default = "default_interval")]
    pub interval: Duration,
    #[serde(default)]
    pub level: ContextLevel,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub drift: DriftConfig,
    /// Refresh references from ingested history whenever `update_period` elapses.
    #[serde(default)]
    pub auto_refresh: bool,
    #[serde(default)]
    pub collation: CollationConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub appraisal: AppraisalConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub storage: StorageConfig,
}

impl PipelineConfig {
    pub fn new(fields: Vec<FieldSpec>) -> Self {
        Self {
            fields,
            interval: default_interval(),
            level: ContextLevel::default(),
            measure: MeasureSpec::default(),
            drift: DriftConfig::default(),
            auto_refresh: false,
            collation: CollationConfig::default(),
            classify: ClassifyConfig::default(),
            appraisal: AppraisalConfig::default(),
            detector: DetectorConfig::default(),
            storage: StorageConfig::default(),
        }
    }

    pub fn schema(&self) -> FieldSchema {
        FieldSchema {
            fields: self.fields.clone(),
        }
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.schema().validate()?;
        if self.interval.as_secs() == 0 {
            return Err(PipelineError::Config("interval must be at least one second".into()));
        }
        self.drift.validate()?;
        self.collation.validate()?;
        if !(self.classify.ratio_epsilon > 0.0) {
            return Err(PipelineError::Config("classify.ratio_epsilon must be positive".into()));
        }
        if self.appraisal.critical_frequency == Some(0) {
            return Err(PipelineError::Config(
                "appraisal.critical_frequency must be >= 1".into(),
            ));
        }
        self.appraisal.default_response.validate()?;
        if let DetectorConfig::Builtin { z } = self.detector {
            if !(z > 0.0) {
                return Err(PipelineError::Config(format!("detector.z must be positive, got {z}")));
            }
        }
        Ok(())
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
