use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionSummary, OutlierIndex};
use crate::domain::{FieldSpec, Timestamp};
use crate::reference::ReferenceTable;
use crate::rules::{Occurrence, RuleSet, RuleSetDocument};

use super::PipelineError;

pub const RULES_FILE: &str = "rules.json";
pub const REFERENCES_FILE: &str = "references.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const OCCURRENCES_FILE: &str = "occurrences.json";
pub const OUTLIERS_FILE: &str = "outliers.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub id: String,
    pub key: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub generated_at: Timestamp,
    pub records: usize,
    pub cells: usize,
    pub detector_source: String,
    pub detector_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSummary>,
    pub outlier_records: usize,
    pub collated_occurrences: usize,
    pub rules: Vec<RuleSummary>,
    /// Contexts with no usable reference samples.
    pub context_gaps: Vec<String>,
    /// Occurrences with at least one field classified without a reference
    /// or with a missing value.
    pub occurrences_with_gaps: usize,
}

/// Everything the training phase produces, and the application phase loads.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub fields: Vec<FieldSpec>,
    pub references: ReferenceTable,
    pub rules: RuleSet,
    /// Training occurrences with their vectors, used for recounting and browsing.
    pub occurrences: Vec<Occurrence>,
    pub outliers: OutlierIndex,
    pub diagnostics: Option<Diagnostics>,
}

impl Bundle {
    pub fn rules_json(&self) -> String {
        self.rules.to_document(&self.fields).to_json()
    }

    /// Writes all bundle files into a fresh sibling directory, then swaps it
    /// into place so readers never see a half-written bundle.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let parent = dir
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        let name = dir
            .file_name()
            .ok_or_else(|| PipelineError::Bundle(format!("invalid bundle path {}", dir.display())))?
            .to_string_lossy()
            .into_owned();
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging)?;
        }
        std::fs::create_dir_all(&staging)?;
        let result = self.write_files(&staging);
        if let Err(e) = result {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
        if dir.exists() {
            let old: PathBuf = parent.join(format!(".{name}.old-{}", std::process::id()));
            std::fs::rename(dir, &old)?;
            std::fs::rename(&staging, dir)?;
            std::fs::remove_dir_all(&old)?;
        } else {
            std::fs::rename(&staging, dir)?;
        }
        Ok(())
    }

    fn write_files(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::write(dir.join(RULES_FILE), self.rules_json())?;
        std::fs::write(dir.join(REFERENCES_FILE), self.references.to_json())?;
        std::fs::write(
            dir.join(OCCURRENCES_FILE),
            serde_json::to_string_pretty(&self.occurrences).map_err(|e| PipelineError::Bundle(e.to_string()))?,
        )?;
        if let Some(d) = &self.diagnostics {
            std::fs::write(
                dir.join(DIAGNOSTICS_FILE),
                serde_json::to_string_pretty(d).map_err(|e| PipelineError::Bundle(e.to_string()))?,
            )?;
        }
        let f = std::fs::File::create(dir.join(OUTLIERS_FILE))?;
        self.outliers.write_csv(f)?;
        Ok(())
    }

    /// Rewrites only `rules.json`, via a temporary file and rename.
    pub fn save_rules(&self, dir: &Path) -> Result<(), PipelineError> {
        write_rules(dir, &self.rules, &self.fields)
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        if !dir.is_dir() {
            return Err(PipelineError::Bundle(format!(
                "bundle directory {} not found",
                dir.display()
            )));
        }
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PipelineError::Bundle(format!("{}: {e}", dir.join(name).display())))
        };
        let doc = RuleSetDocument::from_json(&read(RULES_FILE)?)
            .map_err(|e| PipelineError::Bundle(format!("{RULES_FILE}: {e}")))?;
        let fields = doc.fields.clone();
        let rules = RuleSet::from_document(doc)?;
        let references = ReferenceTable::from_json(&read(REFERENCES_FILE)?)
            .map_err(|e| PipelineError::Bundle(format!("{REFERENCES_FILE}: {e}")))?;
        let occurrences = if dir.join(OCCURRENCES_FILE).exists() {
            serde_json::from_str(&read(OCCURRENCES_FILE)?)
                .map_err(|e| PipelineError::Bundle(format!("{OCCURRENCES_FILE}: {e}")))?
        } else {
            Vec::new()
        };
        let diagnostics = if dir.join(DIAGNOSTICS_FILE).exists() {
            Some(
                serde_json::from_str(&read(DIAGNOSTICS_FILE)?)
                    .map_err(|e| PipelineError::Bundle(format!("{DIAGNOSTICS_FILE}: {e}")))?,
            )
        } else {
            None
        };
        let outliers = if dir.join(OUTLIERS_FILE).exists() {
            let f = std::fs::File::open(dir.join(OUTLIERS_FILE))?;
            OutlierIndex::read_csv(f, "bundle")?
        } else {
            OutlierIndex::default()
        };
        Ok(Self {
            fields,
            references,
            rules,
            occurrences,
            outliers,
            diagnostics,
        })
    }
}

/// Replaces `rules.json` in an existing bundle directory.
pub fn write_rules(dir: &Path, rules: &RuleSet, fields: &[FieldSpec]) -> Result<(), PipelineError> {
    write_atomic(&dir.join(RULES_FILE), rules.to_document(fields).to_json().as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
