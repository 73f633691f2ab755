//! Condition-vector rules: classification, generation, matching and the
//! appraisal actions that turn generated patterns into responses.

mod appraisal;
mod classify;
mod ruleset;

pub use appraisal::{AppraisalAction, AppraisalOutcome, AutoWhitelistOutcome};
pub use classify::{
    classify_condition, Classifier, ClassifyConfig, GapPolicy, VectorDiagnostics, DEFAULT_RATIO_EPSILON,
};
pub use ruleset::{
    export_csv, generate_ruleset, rule_matches, Discovery, GenerationReport, Occurrence, Probe, RuleSet,
    RuleSetDocument, RULESET_SCHEMA_VERSION,
};

use thiserror::Error;

use crate::domain::{DomainError, RuleStatus};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("rule `{0}` not found")]
    UnknownRule(String),
    #[error("rule `{id}` is {} but must be unappraised", .status.as_str())]
    NotUnappraised { id: String, status: RuleStatus },
    #[error("combine target `{0}` is not in the appraised set")]
    TargetNotAppraised(String),
    #[error("split needs at least one mask")]
    NoMasks,
    #[error("split mask {0} is empty")]
    EmptyMask(usize),
    #[error("split mask references field {index} but rules have {n} fields")]
    MaskIndexOutOfRange { index: usize, n: usize },
    #[error("pattern `{key}` already exists as rule `{existing}`")]
    KeyConflict { key: String, existing: String },
    #[error("vector has {got} conditions, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("no reference for field `{field}` of cell `{cell_id}`")]
    MissingReference { field: String, cell_id: String },
    #[error("a null response is assigned by whitelisting, not by assign")]
    NullAssignment,
    #[error("critical frequency must be at least 1")]
    InvalidCriticalFrequency,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid rule set document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}
