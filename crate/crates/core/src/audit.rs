//! Append-only JSON-lines logs: the appraisal audit trail and the outbound
//! action log that response execution writes to.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::Timestamp;
use crate::rules::AppraisalOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: Timestamp,
    pub actor: String,
    pub action: String,
    pub rule_id: String,
    pub before_keys: Vec<String>,
    pub after_keys: Vec<String>,
}

impl AuditEntry {
    pub fn from_outcome(outcome: &AppraisalOutcome, actor: &str, at: Timestamp) -> Self {
        Self {
            at,
            actor: actor.to_owned(),
            action: outcome.action.clone(),
            rule_id: outcome.rule_id.clone(),
            before_keys: outcome.before_keys.clone(),
            after_keys: outcome.after_keys.clone(),
        }
    }
}

/// A file that only ever grows by whole JSON lines.
#[derive(Debug, Clone)]
pub struct JsonLines {
    path: PathBuf,
}

impl JsonLines {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, item: &T) -> std::io::Result<()> {
        let mut line = serde_json::to_string(item).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())
    }

    pub fn read_all<T: DeserializeOwned>(&self) -> std::io::Result<Vec<T>> {
        let f = match std::fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
            .map(|l| l.and_then(|s| serde_json::from_str(&s).map_err(std::io::Error::other)))
            .collect()
    }
}
