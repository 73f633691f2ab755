use std::collections::BTreeSet;

use crate::collation::collate_batch;
use crate::dataset::Dataset;
use crate::detector::{baseline_detect, OutlierIndex};
use crate::domain::{Scale, Timestamp};
use crate::reference::compute_reference_table;
use crate::rules::{generate_ruleset, Classifier};

use super::bundle::{Bundle, Diagnostics, RuleSummary};
use super::{DetectorConfig, PipelineConfig, PipelineError};

/// Runs the training phase: detection (or the supplied external index),
/// reference statistics over non-outlier values, batch collation and rule
/// generation.
pub fn train(
    dataset: &Dataset,
    config: &PipelineConfig,
    external: Option<OutlierIndex>,
    now: Timestamp,
) -> Result<Bundle, PipelineError> {
    config.validate()?;
    let schema = config.schema();
    if dataset.fields != config.field_names() {
        return Err(PipelineError::Config(format!(
            "dataset fields {:?} do not match configured fields {:?}",
            dataset.fields,
            config.field_names()
        )));
    }
    if dataset.is_empty() {
        return Err(PipelineError::Config("dataset has no records".into()));
    }
    dataset.check_alignment(config.interval)?;
    for (i, f) in schema.fields.iter().enumerate() {
        if f.scale == Scale::Exponential && dataset.records.iter().any(|r| r.values[i].is_some_and(|v| v < 0.0)) {
            return Err(PipelineError::Config(format!(
                "field `{}` uses ratio classification but has negative values",
                f.name
            )));
        }
    }
    let classifier = Classifier::new(schema.clone(), config.classify)?;
    let window = dataset
        .span(config.interval)
        .ok_or_else(|| PipelineError::Config("dataset has no time span".into()))?;

    let (outliers, detection) = match (external, &config.detector) {
        (Some(index), _) => {
            index.validate_against(dataset)?;
            (index, None)
        }
        (None, DetectorConfig::Builtin { z }) => {
            let detect_table = compute_reference_table(dataset, None, config.level, window, config.measure, now)?;
            let (index, summary) = baseline_detect(dataset, &detect_table, *z)?;
            (index, Some(summary))
        }
        (None, DetectorConfig::External { path }) => {
            let index = crate::detector::load_outlier_index(path)?;
            index.validate_against(dataset)?;
            (index, None)
        }
    };

    let exclude = config.drift.exclude_outliers.then_some(&outliers);
    let references = compute_reference_table(dataset, exclude, config.level, window, config.measure, now)?;

    let mut flagged: Vec<_> = outliers.select(dataset).into_iter().cloned().collect();
    flagged.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cell_id.cmp(&b.cell_id)));
    let collated = collate_batch(&flagged, &schema, &config.collation)?;
    let (rules, report) = generate_ruleset(&collated, &references, &classifier, now)?;

    let cells: BTreeSet<&str> = dataset.records.iter().map(|r| r.cell_id.as_str()).collect();
    let diagnostics = Diagnostics {
        generated_at: now,
        records: dataset.len(),
        cells: cells.len(),
        detector_source: outliers.source.clone(),
        detector_threshold: outliers.threshold_used,
        detection,
        outlier_records: flagged.len(),
        collated_occurrences: collated.len(),
        rules: rules
            .listing(None)
            .into_iter()
            .map(|r| RuleSummary {
                id: r.id.clone(),
                key: r.canonical_key(),
                count: r.count,
            })
            .collect(),
        context_gaps: references.gaps.iter().map(|k| k.to_string()).collect(),
        occurrences_with_gaps: report.vector_issues.len(),
    };

    Ok(Bundle {
        fields: config.fields.clone(),
        references,
        rules,
        occurrences: report.occurrences,
        outliers,
        diagnostics: Some(diagnostics),
    })
}
