//! Anomaly rule mining over network KPI time series.
//!
//! Outliers flagged by any detector are collated into occurrences, compared
//! field by field against per-context reference statistics, and condensed
//! into unique condition-vector rules. An expert then appraises the rules,
//! and live occurrences are matched against the appraised set, with unseen
//! patterns queued as new rules.

pub mod audit;
pub mod collation;
pub mod dataset;
pub mod detector;
pub mod domain;
pub mod pipeline;
pub mod reference;
pub mod rules;
pub mod synthetic;

pub use collation::{collate_batch, CollationConfig, Collator, NotificationMode};
pub use dataset::Dataset;
pub use detector::{baseline_detect, load_outlier_index, OutlierIndex};
pub use domain::{
    CollatedOutlier, Condition, ContextLevel, ExtendedCondition, FieldSchema, FieldSpec, KpiRecord, Response, Rule,
    RuleStatus, Timestamp,
};
pub use reference::{
    compute_reference_table, update_references, DriftConfig, MeasureKind, MeasureSpec, ReferenceTable,
};
pub use rules::{AppraisalAction, Classifier, ClassifyConfig, RuleSet};
