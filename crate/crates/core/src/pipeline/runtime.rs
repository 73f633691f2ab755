use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::audit::JsonLines;
use crate::collation::{Collator, NotificationMode};
use crate::dataset::Dataset;
use crate::detector::{score_record, OutlierIndex, Verdict};
use crate::domain::{CollatedOutlier, Condition, KpiRecord, Response, ResponseKind, Severity, Timestamp};
use crate::reference::{update_references, ReferenceError, ReferenceTable};
use crate::rules::{Classifier, Probe, RuleSet};

use super::{Bundle, PipelineConfig, PipelineError};

/// How the runtime decides whether an incoming record is an outlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    /// Score the record with the builtin detector against the live references.
    Detect,
    Outlier,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Matched,
    Whitelisted,
    Discovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub event_id: String,
    pub cell_id: String,
    pub region_id: String,
    pub group_id: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    pub duration: u32,
    pub vector: Vec<Condition>,
    pub aggregated: Vec<Option<f64>>,
    pub matched_rule_id: Option<String>,
    pub outcome: EventOutcome,
    pub response_taken: Option<Response>,
    /// Whether the response was handed to the sink by this event.
    pub executed: bool,
    pub discovered_rule_id: Option<String>,
    pub emitted_at: Timestamp,
    /// Eager mode: the earlier event of the same group this one replaces.
    pub supersedes: Option<String>,
}

impl AnomalyEvent {
    pub fn vector_string(&self) -> String {
        crate::domain::vector_string(&self.vector)
    }
}

/// One outbound action handed to the response sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub at: Timestamp,
    pub event_id: String,
    pub group_id: String,
    pub cell_id: String,
    pub rule_id: Option<String>,
    pub severity: Option<Severity>,
    pub priority: Option<i32>,
    pub actions: Vec<String>,
}

pub trait ResponseSink: Send {
    fn execute(&mut self, action: &ActionRecord) -> std::io::Result<()>;
}

/// Appends every action to a JSON-lines file.
#[derive(Debug, Clone)]
pub struct ActionLogSink {
    log: JsonLines,
}

impl ActionLogSink {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        Self {
            log: JsonLines::new(path),
        }
    }
}

impl ResponseSink for ActionLogSink {
    fn execute(&mut self, action: &ActionRecord) -> std::io::Result<()> {
        self.log.append(action)
    }
}

/// Keeps actions in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    actions: Arc<Mutex<Vec<ActionRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn actions(&self) -> Vec<ActionRecord> {
        self.actions.lock().expect("sink lock").clone()
    }
}

impl ResponseSink for MemorySink {
    fn execute(&mut self, action: &ActionRecord) -> std::io::Result<()> {
        self.actions.lock().expect("sink lock").push(action.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub records: u64,
    pub outlier_records: u64,
    pub events: u64,
    pub matched: u64,
    pub whitelisted: u64,
    pub discovered: u64,
    pub actions_executed: u64,
    pub reference_refreshes: u64,
}

#[derive(Debug, Default)]
struct GroupState {
    last_event_id: Option<String>,
    /// Rule (or `None` for the default alarm) whose response already fired.
    fired: Option<Option<String>>,
}

/// The application phase: per-record outlier handling, collation, matching,
/// discovery, response execution and reference refresh.
pub struct Runtime {
    config: PipelineConfig,
    classifier: Classifier,
    references: Arc<ReferenceTable>,
    rules: RuleSet,
    collator: Collator,
    groups: HashMap<String, GroupState>,
    history: VecDeque<KpiRecord>,
    latest: Option<Timestamp>,
    flagged: OutlierIndex,
    sink: Box<dyn ResponseSink>,
    event_seq: u128,
    stats: RuntimeStats,
}

impl Runtime {
    pub fn new(
        config: PipelineConfig,
        references: ReferenceTable,
        rules: RuleSet,
        sink: Box<dyn ResponseSink>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let schema = config.schema();
        let classifier = Classifier::new(schema.clone(), config.classify)?;
        let collator = Collator::new(&schema, config.collation)?;
        Ok(Self {
            config,
            classifier,
            references: Arc::new(references),
            rules,
            collator,
            groups: HashMap::new(),
            history: VecDeque::new(),
            latest: None,
            flagged: OutlierIndex {
                source: "runtime".into(),
                ..Default::default()
            },
            sink,
            event_seq: 0,
            stats: RuntimeStats::default(),
        })
    }

    /// Builds a runtime from a training bundle. The bundle's field list must
    /// agree with `config`.
    pub fn from_bundle(
        config: PipelineConfig,
        bundle: &Bundle,
        sink: Box<dyn ResponseSink>,
    ) -> Result<Self, PipelineError> {
        if bundle.fields != config.fields {
            return Err(PipelineError::Config(
                "bundle fields do not match the configured fields".into(),
            ));
        }
        Self::new(config, bundle.references.clone(), bundle.rules.clone(), sink)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn rules_mut(&mut self) -> &mut RuleSet {
        &mut self.rules
    }

    pub fn references(&self) -> Arc<ReferenceTable> {
        Arc::clone(&self.references)
    }

    pub fn set_references(&mut self, table: ReferenceTable) {
        self.references = Arc::new(table);
    }

    pub fn stats(&self) -> &RuntimeStats {
        &self.stats
    }

    pub fn flagged(&self) -> &OutlierIndex {
        &self.flagged
    }

    pub fn open_groups(&self) -> usize {
        self.collator.open_groups()
    }

    /// Records kept for reference refresh, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &KpiRecord> {
        self.history.iter()
    }

    /// Condition vector and matching rule of `outlier` under the live state.
    pub fn evaluate(&self, outlier: &CollatedOutlier) -> Result<(Vec<Condition>, Option<String>), PipelineError> {
        let (vector, _) = self.classifier.formulate_vector(outlier, &self.references)?;
        let probe = Probe {
            conditions: &vector,
            duration: outlier.duration,
            aggregated: &outlier.aggregated,
        };
        let matched = self.rules.match_rule(&probe).map(|r| r.id.clone());
        Ok((vector, matched))
    }

    /// Handles one record observed at `now`.
    pub fn apply_step(
        &mut self,
        record: &KpiRecord,
        now: Timestamp,
        flag: Flag,
    ) -> Result<Vec<AnomalyEvent>, PipelineError> {
        let n = self.config.fields.len();
        if record.values.len() != n {
            return Err(PipelineError::Config(format!(
                "record has {} values, expected {n}",
                record.values.len()
            )));
        }
        self.stats.records += 1;
        let is_outlier = match flag {
            Flag::Outlier => true,
            Flag::Normal => false,
            Flag::Detect => {
                let z = self.config.detector.z().unwrap_or(5.0);
                let names = self.config.field_names();
                score_record(record, &names, &self.references, z) == Verdict::Outlier
            }
        };
        self.remember(record);

        let mut events = Vec::new();
        let emission = if is_outlier {
            self.stats.outlier_records += 1;
            self.flagged.insert(&record.cell_id, record.timestamp);
            self.collator.push(record, now)?
        } else {
            crate::collation::Emission {
                closed: self.collator.tick(now),
                snapshot: None,
            }
        };
        // Closed groups first: a record that restarts its cell's group
        // closes the previous one before the new snapshot exists.
        for closed in &emission.closed {
            if let Some(e) = self.on_close(closed, now)? {
                events.push(e);
            }
        }
        if let Some(snapshot) = &emission.snapshot {
            events.push(self.on_snapshot(snapshot, now)?);
        }
        if self.config.auto_refresh {
            self.maybe_refresh(now)?;
        }
        Ok(events)
    }

    /// Advances the clock without a record.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<AnomalyEvent>, PipelineError> {
        let closed = self.collator.tick(now);
        self.close_all(closed, now)
    }

    /// Closes every open group, e.g. at the end of a replay.
    pub fn finish(&mut self, now: Timestamp) -> Result<Vec<AnomalyEvent>, PipelineError> {
        let closed = self.collator.flush();
        self.close_all(closed, now)
    }

    fn close_all(&mut self, closed: Vec<CollatedOutlier>, now: Timestamp) -> Result<Vec<AnomalyEvent>, PipelineError> {
        let mut events = Vec::new();
        for c in &closed {
            if let Some(e) = self.on_close(c, now)? {
                events.push(e);
            }
        }
        Ok(events)
    }

    fn remember(&mut self, record: &KpiRecord) {
        self.history.push_back(record.clone());
        let latest = self.latest.map_or(record.timestamp, |t| t.max(record.timestamp));
        self.latest = Some(latest);
        let Ok(len) = chrono::Duration::from_std(self.config.drift.window_length) else {
            return;
        };
        let cutoff = latest - len;
        while self.history.front().is_some_and(|r| r.timestamp < cutoff) {
            let old = self.history.pop_front().expect("front exists");
            self.flagged.entries.remove(&(old.cell_id, old.timestamp));
        }
    }

    fn maybe_refresh(&mut self, now: Timestamp) -> Result<bool, PipelineError> {
        let Ok(period) = chrono::Duration::from_std(self.config.drift.update_period) else {
            return Ok(false);
        };
        if now - self.references.computed_at < period {
            return Ok(false);
        }
        self.refresh_from_history(now)
    }

    /// Recomputes references from the runtime's own history.
    pub fn refresh_from_history(&mut self, now: Timestamp) -> Result<bool, PipelineError> {
        let dataset = Dataset::new(self.config.field_names(), self.history.iter().cloned().collect());
        let flagged = self.flagged.clone();
        self.refresh_with(&dataset, &flagged, now)
    }

    /// Recomputes references from an externally supplied dataset.
    pub fn refresh_references(&mut self, dataset: &Dataset, now: Timestamp) -> Result<bool, PipelineError> {
        let flagged = self.flagged.clone();
        self.refresh_with(dataset, &flagged, now)
    }

    /// Contexts with no samples in the new window keep their previous entry.
    fn refresh_with(
        &mut self,
        dataset: &Dataset,
        flagged: &OutlierIndex,
        now: Timestamp,
    ) -> Result<bool, PipelineError> {
        let mut table = match update_references(&self.references, dataset, flagged, now, &self.config.drift) {
            Ok(t) => t,
            Err(ReferenceError::EmptyWindow { .. }) => return Ok(false),
            Err(e) => return Err(e.into()),
        };
        if table.computed_at == self.references.computed_at {
            return Ok(false);
        }
        for (key, entry) in &self.references.entries {
            table.entries.entry(key.clone()).or_insert(*entry);
        }
        table.gaps.retain(|k| !table.entries.contains_key(k));
        self.references = Arc::new(table);
        self.stats.reference_refreshes += 1;
        Ok(true)
    }

    fn next_event_id(&mut self, now: Timestamp) -> String {
        self.event_seq += 1;
        Ulid::from_parts(now.timestamp_millis().max(0) as u64, self.event_seq).to_string()
    }

    fn resolve(&self, matched: &Option<String>) -> (EventOutcome, Response) {
        match matched.as_deref().and_then(|id| self.rules.get(id)) {
            Some(rule) if rule.response.kind == ResponseKind::Null => {
                (EventOutcome::Whitelisted, rule.response.clone())
            }
            Some(rule) => (EventOutcome::Matched, rule.response.clone()),
            None => (EventOutcome::Discovered, self.config.appraisal.default_response.clone()),
        }
    }

    fn execute(
        &mut self,
        event_id: &str,
        outlier: &CollatedOutlier,
        rule_id: Option<String>,
        response: &Response,
        now: Timestamp,
    ) -> Result<bool, PipelineError> {
        if response.kind == ResponseKind::Null {
            return Ok(false);
        }
        let action = ActionRecord {
            at: now,
            event_id: event_id.to_owned(),
            group_id: outlier.group_id(),
            cell_id: outlier.cell_id.clone(),
            rule_id,
            severity: response.severity,
            priority: response.priority,
            actions: response.actions.clone(),
        };
        self.sink.execute(&action)?;
        self.stats.actions_executed += 1;
        Ok(true)
    }

    fn count(&mut self, outcome: EventOutcome) {
        self.stats.events += 1;
        match outcome {
            EventOutcome::Matched => self.stats.matched += 1,
            EventOutcome::Whitelisted => self.stats.whitelisted += 1,
            EventOutcome::Discovered => self.stats.discovered += 1,
        }
    }

    /// Eager mode: one event per outlier, each superseding the previous
    /// event of the same group. A response fires once per group unless the
    /// matching rule changes.
    fn on_snapshot(&mut self, outlier: &CollatedOutlier, now: Timestamp) -> Result<AnomalyEvent, PipelineError> {
        let (vector, matched) = self.evaluate(outlier)?;
        let (outcome, response) = self.resolve(&matched);
        let group_id = outlier.group_id();
        let event_id = self.next_event_id(now);
        let state = self.groups.entry(group_id.clone()).or_default();
        let supersedes = state.last_event_id.replace(event_id.clone());
        let already = state.fired.as_ref() == Some(&matched);
        let executed = if already {
            false
        } else {
            let fired = self.execute(&event_id, outlier, matched.clone(), &response, now)?;
            if fired {
                self.groups.get_mut(&group_id).expect("group state").fired = Some(matched.clone());
            }
            fired
        };
        self.count(outcome);
        Ok(AnomalyEvent {
            event_id,
            cell_id: outlier.cell_id.clone(),
            region_id: outlier.region_id.clone(),
            group_id,
            t_start: outlier.t_start,
            t_end: outlier.t_end,
            duration: outlier.duration,
            vector,
            aggregated: outlier.aggregated.clone(),
            matched_rule_id: matched,
            outcome,
            response_taken: Some(response),
            executed,
            discovered_rule_id: None,
            emitted_at: now,
            supersedes,
        })
    }

    /// A group closed. Delayed mode emits its single event here. Eager mode
    /// only emits when the final snapshot is unmatched, to report the
    /// discovery.
    fn on_close(&mut self, outlier: &CollatedOutlier, now: Timestamp) -> Result<Option<AnomalyEvent>, PipelineError> {
        let mode = self.collator.config().mode;
        let group_id = outlier.group_id();
        let state = self.groups.remove(&group_id).unwrap_or_default();
        let (vector, matched) = self.evaluate(outlier)?;
        if mode == NotificationMode::Eager && matched.is_some() {
            return Ok(None);
        }
        let (outcome, response) = self.resolve(&matched);
        let event_id = self.next_event_id(now);
        let discovered_rule_id =
            (outcome == EventOutcome::Discovered).then(|| self.rules.record_vector(vector.clone(), now).rule_id);
        let executed = if mode == NotificationMode::Eager && state.fired == Some(None) {
            false
        } else {
            self.execute(&event_id, outlier, matched.clone(), &response, now)?
        };
        self.count(outcome);
        Ok(Some(AnomalyEvent {
            event_id,
            cell_id: outlier.cell_id.clone(),
            region_id: outlier.region_id.clone(),
            group_id,
            t_start: outlier.t_start,
            t_end: outlier.t_end,
            duration: outlier.duration,
            vector,
            aggregated: outlier.aggregated.clone(),
            matched_rule_id: matched,
            outcome,
            response_taken: Some(response),
            executed,
            discovered_rule_id,
            emitted_at: now,
            supersedes: state.last_event_id,
        }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events: Vec<AnomalyEvent>,
    pub stats: RuntimeStats,
}

/// Feeds `dataset` through `runtime` in chronological order, using each
/// record's timestamp as the clock, then flushes open groups. With `flags`,
/// records listed in the index are outliers and all others are normal;
/// without, the builtin detector decides.
pub fn replay(
    runtime: &mut Runtime,
    dataset: &Dataset,
    flags: Option<&OutlierIndex>,
) -> Result<ReplayReport, PipelineError> {
    let mut events = Vec::new();
    let mut last = None;
    for record in dataset.chronological() {
        let flag = match flags {
            Some(idx) if idx.contains(&record.cell_id, record.timestamp) => Flag::Outlier,
            Some(_) => Flag::Normal,
            None => Flag::Detect,
        };
        events.extend(runtime.apply_step(record, record.timestamp, flag)?);
        last = Some(record.timestamp);
    }
    if let Some(now) = last {
        events.extend(runtime.finish(now)?);
    }
    Ok(ReplayReport {
        events,
        stats: runtime.stats().clone(),
    })
}
