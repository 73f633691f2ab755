use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::Utc;
use rulemine_core::audit::{AuditEntry, JsonLines};
use rulemine_core::dataset::Dataset;
use rulemine_core::domain::{Condition, FieldSpec, KpiRecord, Timestamp};
use rulemine_core::pipeline::{write_rules, ActionLogSink, AnomalyEvent, Bundle, Flag, PipelineConfig, Runtime};
use rulemine_core::rules::{rule_matches, AppraisalAction, AppraisalOutcome, Occurrence, Probe};
use rulemine_core::Rule;
use serde::Serialize;
use tokio::sync::broadcast;

use crate::ServiceError;

const EVENT_CHANNEL: usize = 1024;

/// Where an anomaly listed by the API came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalySource {
    Training,
    Live,
}

/// One occurrence as the API lists it: a training occurrence or the latest
/// event of a live group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyView {
    pub id: String,
    pub source: AnomalySource,
    pub cell_id: String,
    pub region_id: String,
    pub group_id: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    pub duration: u32,
    pub vector: Vec<Condition>,
    pub aggregated: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<AnomalyEvent>,
}

impl AnomalyView {
    fn from_training(o: &Occurrence) -> Self {
        Self {
            id: o.outlier.group_id(),
            source: AnomalySource::Training,
            cell_id: o.outlier.cell_id.clone(),
            region_id: o.outlier.region_id.clone(),
            group_id: o.outlier.group_id(),
            t_start: o.outlier.t_start,
            t_end: o.outlier.t_end,
            duration: o.outlier.duration,
            vector: o.vector.clone(),
            aggregated: o.outlier.aggregated.clone(),
            event: None,
        }
    }

    fn from_event(e: &AnomalyEvent) -> Self {
        Self {
            id: e.event_id.clone(),
            source: AnomalySource::Live,
            cell_id: e.cell_id.clone(),
            region_id: e.region_id.clone(),
            group_id: e.group_id.clone(),
            t_start: e.t_start,
            t_end: e.t_end,
            duration: e.duration,
            vector: e.vector.clone(),
            aggregated: e.aggregated.clone(),
            event: Some(e.clone()),
        }
    }

    pub fn matches(&self, rule: &Rule) -> bool {
        rule_matches(
            rule,
            &Probe {
                conditions: &self.vector,
                duration: self.duration,
                aggregated: &self.aggregated,
            },
        )
    }
}

/// Everything behind the single writer lock.
pub struct Inner {
    pub runtime: Runtime,
    pub fields: Vec<FieldSpec>,
    pub occurrences: Vec<Occurrence>,
    /// Live groups in arrival order, each holding its latest event.
    pub live: Vec<AnomalyEvent>,
    live_index: HashMap<String, usize>,
    /// KPI history per cell for plotting.
    pub series: BTreeMap<String, BTreeMap<Timestamp, KpiRecord>>,
    last_seen: HashMap<String, Timestamp>,
    bundle_dir: PathBuf,
    audit: JsonLines,
    event_log: JsonLines,
}

impl Inner {
    pub fn anomalies(&self) -> Vec<AnomalyView> {
        self.occurrences
            .iter()
            .map(AnomalyView::from_training)
            .chain(self.live.iter().map(AnomalyView::from_event))
            .collect()
    }

    pub fn anomaly(&self, id: &str) -> Option<AnomalyView> {
        if let Some(&i) = self.live_index.get(id) {
            return Some(AnomalyView::from_event(&self.live[i]));
        }
        self.occurrences
            .iter()
            .find(|o| o.outlier.group_id() == id)
            .map(AnomalyView::from_training)
    }

    fn record_event(&mut self, e: &AnomalyEvent) -> Result<(), ServiceError> {
        let slot = e.supersedes.as_ref().and_then(|s| self.live_index.remove(s));
        match slot {
            Some(i) => self.live[i] = e.clone(),
            None => self.live.push(e.clone()),
        }
        let i = slot.unwrap_or(self.live.len() - 1);
        self.live_index.insert(e.event_id.clone(), i);
        self.event_log.append(e)?;
        Ok(())
    }

    fn remember(&mut self, r: &KpiRecord) {
        self.series
            .entry(r.cell_id.clone())
            .or_default()
            .insert(r.timestamp, r.clone());
    }

    fn persist_rules(&self) -> Result<(), ServiceError> {
        write_rules(&self.bundle_dir, self.runtime.rules(), &self.fields)?;
        Ok(())
    }

    pub fn appraise(
        &mut self,
        rule_id: &str,
        action: &AppraisalAction,
        actor: &str,
    ) -> Result<AppraisalOutcome, ServiceError> {
        let now = Utc::now();
        let outcome = self
            .runtime
            .rules_mut()
            .apply_appraisal(rule_id, action, &self.occurrences, now)?;
        self.persist_rules()?;
        self.audit.append(&AuditEntry::from_outcome(&outcome, actor, now))?;
        Ok(outcome)
    }

    /// Feeds records through the runtime with each record's timestamp as the
    /// clock. Records must not go back in time for their cell.
    pub fn ingest(&mut self, records: &[KpiRecord], flag: Flag) -> Result<Vec<AnomalyEvent>, ServiceError> {
        let n = self.fields.len();
        let mut sorted: Vec<&KpiRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cell_id.cmp(&b.cell_id)));
        let mut last = self.last_seen.clone();
        for r in &sorted {
            if r.values.len() != n {
                return Err(ServiceError::BadRequest(format!(
                    "record for {} at {} has {} values, expected {n}",
                    r.cell_id,
                    r.timestamp,
                    r.values.len()
                )));
            }
            if let Some(prev) = last.get(&r.cell_id) {
                if r.timestamp < *prev {
                    return Err(ServiceError::Unprocessable(format!(
                        "record for {} at {} precedes {prev}",
                        r.cell_id, r.timestamp
                    )));
                }
            }
            last.insert(r.cell_id.clone(), r.timestamp);
        }
        let before = self.runtime.stats().discovered;
        let mut events = Vec::new();
        for r in sorted {
            self.remember(r);
            self.last_seen.insert(r.cell_id.clone(), r.timestamp);
            for e in self.runtime.apply_step(r, r.timestamp, flag)? {
                self.record_event(&e)?;
                events.push(e);
            }
        }
        if self.runtime.stats().discovered != before {
            self.persist_rules()?;
        }
        Ok(events)
    }
}

pub struct AppState {
    inner: Mutex<Inner>,
    events: broadcast::Sender<AnomalyEvent>,
}

impl AppState {
    /// Loads the bundle in `bundle_dir` and builds the live runtime. `data`
    /// seeds the plotting history, typically with the training dataset.
    pub fn open(config: PipelineConfig, bundle_dir: &Path, data: Option<Dataset>) -> Result<Self, ServiceError> {
        let bundle = Bundle::load(bundle_dir)?;
        if bundle.fields != config.fields {
            return Err(ServiceError::Startup(
                "bundle fields do not match the configured fields".into(),
            ));
        }
        let action_log = config
            .storage
            .action_log
            .clone()
            .unwrap_or_else(|| bundle_dir.join("actions.jsonl"));
        let audit = JsonLines::new(
            config
                .storage
                .audit_log
                .clone()
                .unwrap_or_else(|| bundle_dir.join("audit.jsonl")),
        );
        let event_log = JsonLines::new(
            config
                .storage
                .event_log
                .clone()
                .unwrap_or_else(|| bundle_dir.join("events.jsonl")),
        );
        let runtime = Runtime::from_bundle(config, &bundle, Box::new(ActionLogSink::new(action_log)))?;
        let mut inner = Inner {
            runtime,
            fields: bundle.fields,
            occurrences: bundle.occurrences,
            live: Vec::new(),
            live_index: HashMap::new(),
            series: BTreeMap::new(),
            last_seen: HashMap::new(),
            bundle_dir: bundle_dir.to_owned(),
            audit,
            event_log,
        };
        if let Some(ds) = data {
            if ds.fields != inner.fields.iter().map(|f| f.name.clone()).collect::<Vec<_>>() {
                return Err(ServiceError::Startup("dataset fields do not match the bundle".into()));
            }
            for r in &ds.records {
                inner.remember(r);
            }
        }
        let (events, _) = broadcast::channel(EVENT_CHANNEL);
        Ok(Self {
            inner: Mutex::new(inner),
            events,
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<AnomalyEvent> {
        self.events.subscribe()
    }

    pub fn publish(&self, events: &[AnomalyEvent]) {
        for e in events {
            // no subscribers is fine
            let _ = self.events.send(e.clone());
        }
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}
