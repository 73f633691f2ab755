//! Shared vocabulary: KPI records, field schema, conditions, rules and
//! collated outliers, plus their canonical encodings.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("field schema must contain at least one field")]
    EmptySchema,
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("field `{name}`: threshold must be positive, got {theta}")]
    NonPositiveTheta { name: String, theta: f64 },
    #[error("field `{name}`: ratio threshold must exceed 1, got {theta}")]
    RatioThetaTooSmall { name: String, theta: f64 },
    #[error("invalid condition glyph `{0}`")]
    InvalidGlyph(String),
    #[error("extended condition references field {index} but only {n} fields exist")]
    FieldIndexOutOfRange { index: usize, n: usize },
    #[error("extended condition coefficient must be positive, got {0}")]
    NonPositiveCoefficient(f64),
    #[error("duration bound must be positive")]
    ZeroDurationBound,
    #[error("null responses cannot carry actions")]
    NullResponseWithActions,
}

/// How a field varies, which selects difference or ratio significance tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Exponential,
}

/// Aggregation applied to a field when consecutive outliers are collated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub scale: Scale,
    pub agg: Aggregation,
    /// Significance threshold: an absolute difference for linear fields,
    /// a ratio for exponential ones.
    pub theta: f64,
}

impl FieldSpec {
    pub fn linear(name: impl Into<String>, agg: Aggregation, theta: f64) -> Self {
        Self {
            name: name.into(),
            scale: Scale::Linear,
            agg,
            theta,
        }
    }

    pub fn exponential(name: impl Into<String>, agg: Aggregation, theta: f64) -> Self {
        Self {
            name: name.into(),
            scale: Scale::Exponential,
            agg,
            theta,
        }
    }
}

/// Ordered field list. The order here is the order of every condition
/// vector and every record's value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldSchema {
    pub fields: Vec<FieldSpec>,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, DomainError> {
        let schema = Self { fields };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.fields.is_empty() {
            return Err(DomainError::EmptySchema);
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(DomainError::DuplicateField(f.name.clone()));
            }
            if !(f.theta > 0.0) {
                return Err(DomainError::NonPositiveTheta {
                    name: f.name.clone(),
                    theta: f.theta,
                });
            }
            if f.scale == Scale::Exponential && !(f.theta > 1.0) {
                return Err(DomainError::RatioThetaTooSmall {
                    name: f.name.clone(),
                    theta: f.theta,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// One timestamped row of KPI values for a cell. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub timestamp: Timestamp,
    pub cell_id: String,
    pub region_id: String,
    pub values: Vec<Option<f64>>,
}

/// Granularity at which reference statistics are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextLevel {
    Kpi,
    #[default]
    CellKpi,
    RegionKpi,
}

/// Identifies one context bucket. Which of `cell`/`region` is set follows
/// from the level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextKey {
    pub kpi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl ContextKey {
    pub fn for_level(level: ContextLevel, kpi: &str, cell_id: &str, region_id: &str) -> Self {
        let (cell, region) = match level {
            ContextLevel::Kpi => (None, None),
            ContextLevel::CellKpi => (Some(cell_id.to_owned()), None),
            ContextLevel::RegionKpi => (None, Some(region_id.to_owned())),
        };
        Self {
            kpi: kpi.to_owned(),
            cell,
            region,
        }
    }

    /// Whether the populated key components agree with `level`.
    pub fn is_valid_for(&self, level: ContextLevel) -> bool {
        match level {
            ContextLevel::Kpi => self.cell.is_none() && self.region.is_none(),
            ContextLevel::CellKpi => self.cell.is_some() && self.region.is_none(),
            ContextLevel::RegionKpi => self.cell.is_none() && self.region.is_some(),
        }
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kpi)?;
        if let Some(c) = &self.cell {
            write!(f, "@cell:{c}")?;
        }
        if let Some(r) = &self.region {
            write!(f, "@region:{r}")?;
        }
        Ok(())
    }
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Option<Self> {
        (start < end).then_some(Self { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

/// Per-field comparison of an observed value against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Lt,
    Approx,
    Gt,
    DontCare,
}

impl Condition {
    pub fn glyph(self) -> &'static str {
        match self {
            Condition::Lt => "-",
            Condition::Approx => "0",
            Condition::Gt => "+",
            Condition::DontCare => "x",
        }
    }

    /// Numeric code for the three concrete conditions.
    pub fn code(self) -> Option<i8> {
        match self {
            Condition::Lt => Some(-1),
            Condition::Approx => Some(0),
            Condition::Gt => Some(1),
            Condition::DontCare => None,
        }
    }

    /// `self` used as a rule position accepts `observed`.
    pub fn accepts(self, observed: Condition) -> bool {
        self == Condition::DontCare || self == observed
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.glyph())
    }
}

impl FromStr for Condition {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "-" => Ok(Condition::Lt),
            "0" => Ok(Condition::Approx),
            "+" => Ok(Condition::Gt),
            "x" => Ok(Condition::DontCare),
            other => Err(DomainError::InvalidGlyph(other.to_owned())),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.glyph())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Renders a vector as the comma-joined glyph string, e.g. `+,-,0`.
pub fn vector_string(conditions: &[Condition]) -> String {
    let mut out = String::with_capacity(conditions.len() * 2);
    for (i, c) in conditions.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(c.glyph());
    }
    out
}

pub fn parse_vector(s: &str) -> Result<Vec<Condition>, DomainError> {
    s.split(',').map(|g| g.trim().parse()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }

    pub fn holds<T: PartialOrd>(self, lhs: T, rhs: T) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }
}

/// Strict comparison used between two fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrictOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
}

/// Custom conditions an expert may attach to a rule on top of its vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExtendedCondition {
    /// `duration <op> k`, duration counted in records.
    Duration { op: CmpOp, k: u32 },
    /// `x[lhs] <op> coeff * x[rhs]` on the aggregated values.
    FieldCmp {
        lhs: usize,
        op: StrictOp,
        coeff: f64,
        rhs: usize,
    },
}

impl ExtendedCondition {
    pub fn validate(&self, n_fields: usize) -> Result<(), DomainError> {
        match *self {
            ExtendedCondition::Duration { k, .. } => {
                if k == 0 {
                    return Err(DomainError::ZeroDurationBound);
                }
            }
            ExtendedCondition::FieldCmp { lhs, coeff, rhs, .. } => {
                for index in [lhs, rhs] {
                    if index >= n_fields {
                        return Err(DomainError::FieldIndexOutOfRange { index, n: n_fields });
                    }
                }
                if !(coeff > 0.0) {
                    return Err(DomainError::NonPositiveCoefficient(coeff));
                }
            }
        }
        Ok(())
    }

    /// Evaluates against an occurrence. A missing operand makes a field
    /// comparison false.
    pub fn holds(&self, duration: u32, aggregated: &[Option<f64>]) -> bool {
        match *self {
            ExtendedCondition::Duration { op, k } => op.holds(duration, k),
            ExtendedCondition::FieldCmp { lhs, op, coeff, rhs } => {
                let (Some(Some(a)), Some(Some(b))) = (aggregated.get(lhs), aggregated.get(rhs)) else {
                    return false;
                };
                match op {
                    StrictOp::Gt => *a > coeff * b,
                    StrictOp::Lt => *a < coeff * b,
                }
            }
        }
    }

    pub fn key(&self) -> String {
        match *self {
            ExtendedCondition::Duration { op, k } => format!("dur{}{k}", op.symbol()),
            ExtendedCondition::FieldCmp { lhs, op, coeff, rhs } => {
                let sym = match op {
                    StrictOp::Gt => ">",
                    StrictOp::Lt => "<",
                };
                format!("f{lhs}{sym}{coeff}*f{rhs}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Null,
    #[default]
    DefaultAlarm,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Minor,
    Major,
    Critical,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Critical => "critical",
        })
    }
}

/// What the system does when an occurrence matches a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Response {
    pub kind: ResponseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i32>,
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

impl Response {
    pub fn null() -> Self {
        Self {
            kind: ResponseKind::Null,
            ..Default::default()
        }
    }

    pub fn default_alarm() -> Self {
        Self {
            kind: ResponseKind::DefaultAlarm,
            severity: Some(Severity::Minor),
            priority: None,
            actions: vec!["raise_alarm".to_owned()],
            notes: String::new(),
        }
    }

    pub fn custom(severity: Severity, actions: Vec<String>) -> Self {
        Self {
            kind: ResponseKind::Custom,
            severity: Some(severity),
            priority: None,
            actions,
            notes: String::new(),
        }
    }

    pub fn is_null(&self) -> bool {
        self.kind == ResponseKind::Null
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.is_null() && !self.actions.is_empty() {
            return Err(DomainError::NullResponseWithActions);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    Unappraised,
    Appraised,
    Whitelisted,
}

impl RuleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleStatus::Unappraised => "unappraised",
            RuleStatus::Appraised => "appraised",
            RuleStatus::Whitelisted => "whitelisted",
        }
    }

    /// Appraised and whitelisted rules both live in the appraised set.
    pub fn in_appraised_set(self) -> bool {
        !matches!(self, RuleStatus::Unappraised)
    }
}

impl FromStr for RuleStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unappraised" => Ok(RuleStatus::Unappraised),
            "appraised" => Ok(RuleStatus::Appraised),
            "whitelisted" => Ok(RuleStatus::Whitelisted),
            other => Err(format!("unknown rule status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub extended: Vec<ExtendedCondition>,
    pub count: u64,
    pub status: RuleStatus,
    pub response: Response,
    pub created_at: Timestamp,
}

impl Rule {
    /// Deterministic identity of the rule's pattern: the condition glyphs,
    /// followed by `|`-separated extended condition keys. Count, response
    /// and status do not participate.
    pub fn canonical_key(&self) -> String {
        canonical_key(&self.conditions, &self.extended)
    }

    pub fn dont_care_count(&self) -> usize {
        self.conditions.iter().filter(|c| **c == Condition::DontCare).count()
    }
}

pub fn canonical_key(conditions: &[Condition], extended: &[ExtendedCondition]) -> String {
    let mut key = vector_string(conditions);
    for ext in extended {
        key.push('|');
        key.push_str(&ext.key());
    }
    key
}

/// A run of consecutive outlier records for one cell condensed to one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollatedOutlier {
    pub cell_id: String,
    pub region_id: String,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    /// Per-field aggregate; `None` when every value of the field was missing.
    pub aggregated: Vec<Option<f64>>,
    /// Number of records in the run.
    pub duration: u32,
}

impl CollatedOutlier {
    /// Stable identifier of the run, shared by every snapshot of a growing group.
    pub fn group_id(&self) -> String {
        group_id(&self.cell_id, self.t_start)
    }
}

pub fn group_id(cell_id: &str, t_start: Timestamp) -> String {
    format!("{cell_id}@{}", t_start.format("%Y%m%dT%H%M%SZ"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rule(conditions: Vec<Condition>, extended: Vec<ExtendedCondition>, count: u64) -> Rule {
        Rule {
            id: "r1".into(),
            conditions,
            extended,
            count,
            status: RuleStatus::Unappraised,
            response: Response::default_alarm(),
            created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn key_encodes_plain_vector() {
        use Condition::*;
        let r = rule(vec![Gt, Lt, Approx], vec![], 1);
        assert_eq!(r.canonical_key(), "+,-,0");
    }

    #[test]
    fn key_ignores_count_and_response() {
        use Condition::*;
        let a = rule(vec![Gt, Lt], vec![], 1);
        let mut b = rule(vec![Gt, Lt], vec![], 99);
        b.response = Response::null();
        b.status = RuleStatus::Whitelisted;
        assert_eq!(a.canonical_key(), b.canonical_key());
    }

    #[test]
    fn key_includes_extended_conditions() {
        use Condition::*;
        let r = rule(
            vec![Gt, DontCare],
            vec![ExtendedCondition::Duration { op: CmpOp::Gt, k: 4 }],
            1,
        );
        assert_eq!(r.canonical_key(), "+,x|dur>4");
        let f = ExtendedCondition::FieldCmp {
            lhs: 0,
            op: StrictOp::Gt,
            coeff: 2.0,
            rhs: 2,
        };
        assert_eq!(f.key(), "f0>2*f2");
    }

    #[test]
    fn glyphs_parse_back() {
        for c in [Condition::Lt, Condition::Approx, Condition::Gt, Condition::DontCare] {
            assert_eq!(c.glyph().parse::<Condition>().unwrap(), c);
        }
        assert!("?".parse::<Condition>().is_err());
        assert_eq!(parse_vector("+, -,0,x").unwrap().len(), 4);
    }

    #[test]
    fn schema_rejects_bad_fields() {
        let ok = FieldSpec::linear("a", Aggregation::Mean, 1.0);
        assert_eq!(FieldSchema::new(vec![]), Err(DomainError::EmptySchema));
        assert!(matches!(
            FieldSchema::new(vec![ok.clone(), ok.clone()]),
            Err(DomainError::DuplicateField(_))
        ));
        assert!(matches!(
            FieldSchema::new(vec![FieldSpec::linear("a", Aggregation::Mean, 0.0)]),
            Err(DomainError::NonPositiveTheta { .. })
        ));
        assert!(matches!(
            FieldSchema::new(vec![FieldSpec::exponential("a", Aggregation::Mean, 0.5)]),
            Err(DomainError::RatioThetaTooSmall { .. })
        ));
    }

    #[test]
    fn extended_condition_evaluation() {
        let dur = ExtendedCondition::Duration { op: CmpOp::Gt, k: 4 };
        assert!(!dur.holds(3, &[]));
        assert!(!dur.holds(4, &[]));
        assert!(dur.holds(5, &[]));
        let f = ExtendedCondition::FieldCmp {
            lhs: 0,
            op: StrictOp::Gt,
            coeff: 2.0,
            rhs: 1,
        };
        assert!(f.holds(1, &[Some(5.0), Some(2.0)]));
        assert!(!f.holds(1, &[Some(4.0), Some(2.0)]));
        assert!(!f.holds(1, &[None, Some(2.0)]));
        assert!(f.validate(1).is_err());
        assert!(f.validate(2).is_ok());
    }

    #[test]
    fn context_key_levels() {
        let k = ContextKey::for_level(ContextLevel::RegionKpi, "ul", "c1", "r1");
        assert_eq!(k.region.as_deref(), Some("r1"));
        assert!(k.cell.is_none());
        assert!(k.is_valid_for(ContextLevel::RegionKpi));
        assert!(!k.is_valid_for(ContextLevel::CellKpi));
    }

    #[test]
    fn null_response_cannot_have_actions() {
        let mut r = Response::null();
        assert!(r.validate().is_ok());
        r.actions.push("page".into());
        assert_eq!(r.validate(), Err(DomainError::NullResponseWithActions));
    }
}
