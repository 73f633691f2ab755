use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    canonical_key, CollatedOutlier, Condition, FieldSpec, Response, ResponseKind, Rule, RuleStatus, Timestamp,
};
use crate::reference::ReferenceTable;

use super::classify::{Classifier, VectorDiagnostics};
use super::RuleError;

pub const RULESET_SCHEMA_VERSION: u32 = 1;

/// What a rule is matched against: an occurrence's vector plus the extras
/// extended conditions may inspect.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub conditions: &'a [Condition],
    pub duration: u32,
    pub aggregated: &'a [Option<f64>],
}

/// A collated outlier together with its condition vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    #[serde(flatten)]
    pub outlier: CollatedOutlier,
    pub vector: Vec<Condition>,
}

impl Occurrence {
    pub fn probe(&self) -> Probe<'_> {
        Probe {
            conditions: &self.vector,
            duration: self.outlier.duration,
            aggregated: &self.outlier.aggregated,
        }
    }
}

/// Whether `rule` alone accepts `probe`: every position is a don't-care or
/// equal to the observed condition, and every extended condition holds.
pub fn rule_matches(rule: &Rule, probe: &Probe<'_>) -> bool {
    rule.conditions.len() == probe.conditions.len()
        && rule.conditions.iter().zip(probe.conditions).all(|(r, o)| r.accepts(*o))
        && rule.extended.iter().all(|e| e.holds(probe.duration, probe.aggregated))
}

/// Result of recording an unmatched vector in the unappraised set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovery {
    pub rule_id: String,
    pub created: bool,
    pub count: u64,
}

/// Unappraised and appraised rules. A rule's status says which collection
/// it belongs to; canonical keys are unique within each collection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
    next_id: u64,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn unappraised(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.status == RuleStatus::Unappraised)
    }

    /// Appraised and whitelisted rules.
    pub fn appraised(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.status.in_appraised_set())
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub(super) fn position(&self, id: &str) -> Result<usize, RuleError> {
        self.rules
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| RuleError::UnknownRule(id.to_owned()))
    }

    pub(super) fn rules_mut(&mut self) -> &mut Vec<Rule> {
        &mut self.rules
    }

    /// Rules with the given status, highest count first, ties by id.
    pub fn listing(&self, status: Option<RuleStatus>) -> Vec<&Rule> {
        let mut out: Vec<&Rule> = self
            .rules
            .iter()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub(super) fn allocate_id(&mut self) -> String {
        self.next_id += 1;
        format!("r{:05}", self.next_id)
    }

    /// Rule in the same collection as `status` whose key is `key`.
    pub(super) fn find_key(&self, key: &str, appraised_set: bool, except: Option<&str>) -> Option<&Rule> {
        self.rules.iter().find(|r| {
            r.status.in_appraised_set() == appraised_set && Some(r.id.as_str()) != except && r.canonical_key() == key
        })
    }

    pub(super) fn push_unappraised(
        &mut self,
        conditions: Vec<Condition>,
        extended: Vec<crate::domain::ExtendedCondition>,
        count: u64,
        now: Timestamp,
    ) -> String {
        let id = self.allocate_id();
        self.rules.push(Rule {
            id: id.clone(),
            conditions,
            extended,
            count,
            status: RuleStatus::Unappraised,
            response: Response::default_alarm(),
            created_at: now,
        });
        id
    }

    /// Builds an unappraised set from vectors: one rule per distinct
    /// vector, counting its occurrences.
    pub fn from_vectors<I>(vectors: I, now: Timestamp) -> Self
    where
        I: IntoIterator<Item = Vec<Condition>>,
    {
        let mut set = RuleSet::new();
        for v in vectors {
            set.record_vector(v, now);
        }
        set
    }

    /// Adds `vector` to the unappraised set, or increments the count of the
    /// unappraised rule with the same key.
    pub fn record_vector(&mut self, vector: Vec<Condition>, now: Timestamp) -> Discovery {
        let key = canonical_key(&vector, &[]);
        if let Some(rule) = self
            .rules
            .iter_mut()
            .find(|r| r.status == RuleStatus::Unappraised && r.canonical_key() == key)
        {
            rule.count += 1;
            return Discovery {
                rule_id: rule.id.clone(),
                created: false,
                count: rule.count,
            };
        }
        let rule_id = self.push_unappraised(vector, Vec::new(), 1, now);
        Discovery {
            rule_id,
            created: true,
            count: 1,
        }
    }

    /// Most specific appraised or whitelisted rule accepting `probe`:
    /// fewest don't-cares, then most extended conditions, then oldest.
    pub fn match_rule(&self, probe: &Probe<'_>) -> Option<&Rule> {
        self.appraised().filter(|r| rule_matches(r, probe)).min_by(|a, b| {
            a.dont_care_count()
                .cmp(&b.dont_care_count())
                .then_with(|| b.extended.len().cmp(&a.extended.len()))
                .then_with(|| a.created_at.cmp(&b.created_at))
                .then_with(|| a.id.cmp(&b.id))
        })
    }

    /// Sets each rule's count to the number of occurrences it accepts on its own.
    pub fn recount(&mut self, occurrences: &[Occurrence]) {
        for rule in &mut self.rules {
            rule.count = occurrences.iter().filter(|o| rule_matches(rule, &o.probe())).count() as u64;
        }
    }

    /// Formulates vectors for `outliers` and recounts against them.
    pub fn recount_outliers(
        &mut self,
        outliers: &[CollatedOutlier],
        table: &ReferenceTable,
        classifier: &Classifier,
    ) -> Result<(), RuleError> {
        let occurrences = outliers
            .iter()
            .map(|o| {
                classifier.formulate_vector(o, table).map(|(vector, _)| Occurrence {
                    outlier: o.clone(),
                    vector,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.recount(&occurrences);
        Ok(())
    }

    pub fn to_document(&self, fields: &[FieldSpec]) -> RuleSetDocument {
        RuleSetDocument {
            schema_version: RULESET_SCHEMA_VERSION,
            fields: fields.to_vec(),
            rules: self.rules.clone(),
        }
    }

    /// Rebuilds a rule set from its persisted form, checking every invariant.
    pub fn from_document(doc: RuleSetDocument) -> Result<Self, RuleError> {
        let bad = |m: String| Err(RuleError::InvalidDocument(m));
        if doc.schema_version != RULESET_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", doc.schema_version));
        }
        let n = doc.fields.len();
        let mut keys: HashMap<(bool, String), &str> = HashMap::new();
        let mut ids: HashMap<&str, ()> = HashMap::new();
        for r in &doc.rules {
            if ids.insert(&r.id, ()).is_some() {
                return bad(format!("duplicate rule id `{}`", r.id));
            }
            if r.conditions.len() != n {
                return bad(format!(
                    "rule `{}` has {} conditions, expected {n}",
                    r.id,
                    r.conditions.len()
                ));
            }
            for e in &r.extended {
                e.validate(n)?;
            }
            r.response.validate()?;
            match r.status {
                RuleStatus::Whitelisted if !r.response.is_null() => {
                    return bad(format!("whitelisted rule `{}` must have a null response", r.id));
                }
                RuleStatus::Unappraised if r.response.kind != ResponseKind::DefaultAlarm => {
                    return bad(format!("unappraised rule `{}` must carry the default response", r.id));
                }
                _ => {}
            }
            if let Some(other) = keys.insert((r.status.in_appraised_set(), r.canonical_key()), &r.id) {
                return bad(format!(
                    "rules `{other}` and `{}` share key `{}`",
                    r.id,
                    r.canonical_key()
                ));
            }
        }
        let next_id = doc
            .rules
            .iter()
            .filter_map(|r| r.id.strip_prefix('r').and_then(|s| s.parse::<u64>().ok()))
            .max()
            .unwrap_or(0);
        Ok(Self {
            rules: doc.rules,
            next_id,
        })
    }

    pub fn check_unique_keys(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.rules
            .iter()
            .all(|r| seen.insert((r.status.in_appraised_set(), r.canonical_key())))
    }
}

/// Persisted rule set: `{schema_version, fields, rules}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetDocument {
    pub schema_version: u32,
    pub fields: Vec<FieldSpec>,
    pub rules: Vec<Rule>,
}

impl RuleSetDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub occurrences: Vec<Occurrence>,
    /// Per-occurrence classification issues, keyed by group id.
    pub vector_issues: Vec<(String, VectorDiagnostics)>,
}

/// Formulates a vector for every collated outlier and builds the
/// unappraised rule set, one rule per distinct vector.
pub fn generate_ruleset(
    outliers: &[CollatedOutlier],
    table: &ReferenceTable,
    classifier: &Classifier,
    now: Timestamp,
) -> Result<(RuleSet, GenerationReport), RuleError> {
    let mut report = GenerationReport::default();
    let mut set = RuleSet::new();
    for outlier in outliers {
        let (vector, diag) = classifier.formulate_vector(outlier, table)?;
        if !diag.is_clean() {
            report.vector_issues.push((outlier.group_id(), diag));
        }
        set.record_vector(vector.clone(), now);
        report.occurrences.push(Occurrence {
            outlier: outlier.clone(),
            vector,
        });
    }
    Ok((set, report))
}

/// Spreadsheet view: one row per rule in listing order, one glyph column per field.
pub fn export_csv<W: std::io::Write>(rules: &RuleSet, fields: &[FieldSpec], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["rule_id".to_owned()];
    header.extend(fields.iter().map(|f| f.name.clone()));
    header.extend(["extended", "count", "status", "severity"].map(String::from));
    w.write_record(&header)?;
    for rule in rules.listing(None) {
        let mut row = vec![rule.id.clone()];
        row.extend(rule.conditions.iter().map(|c| c.glyph().to_owned()));
        row.push(rule.extended.iter().map(|e| e.key()).collect::<Vec<_>>().join(";"));
        row.push(rule.count.to_string());
        row.push(rule.status.as_str().to_owned());
        row.push(rule.response.severity.map(|s| s.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
