//! Significance tests of an observed value against its reference and the
//! construction of condition vectors from collated outliers.

use serde::{Deserialize, Serialize};

use crate::domain::{CollatedOutlier, Condition, FieldSchema, FieldSpec, Scale};
use crate::reference::ReferenceTable;

use super::RuleError;

/// Lower clamp applied to both operands of a ratio test.
pub const DEFAULT_RATIO_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Classify the field as approximately equal and report the gap.
    #[default]
    Approx,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    #[serde(default = "default_epsilon")]
    pub ratio_epsilon: f64,
    #[serde(default)]
    pub missing_reference: GapPolicy,
}

fn default_epsilon() -> f64 {
    DEFAULT_RATIO_EPSILON
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            ratio_epsilon: DEFAULT_RATIO_EPSILON,
            missing_reference: GapPolicy::Approx,
        }
    }
}

/// Compares `x` with `reference` under the field's scale and threshold.
///
/// Linear fields use the difference test (`x - ref > θ` is greater,
/// `x - ref < -θ` is lesser); exponential fields the ratio test
/// (`x / ref > θ`, `ref / x > θ`) on operands clamped to `ratio_epsilon`.
pub fn classify_condition(x: f64, reference: f64, field: &FieldSpec, ratio_epsilon: f64) -> Condition {
    let theta = field.theta;
    match field.scale {
        Scale::Linear => {
            let diff = x - reference;
            if diff > theta {
                Condition::Gt
            } else if diff < -theta {
                Condition::Lt
            } else {
                Condition::Approx
            }
        }
        Scale::Exponential => {
            let x = x.max(ratio_epsilon);
            let r = reference.max(ratio_epsilon);
            if x / r > theta {
                Condition::Gt
            } else if r / x > theta {
                Condition::Lt
            } else {
                Condition::Approx
            }
        }
    }
}

/// Fields that could not be classified normally while building a vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorDiagnostics {
    /// Field indices whose aggregated value was missing.
    pub imputed_missing: Vec<usize>,
    /// Field indices with no reference entry for the outlier's context.
    pub missing_reference: Vec<usize>,
}

impl VectorDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.imputed_missing.is_empty() && self.missing_reference.is_empty()
    }
}

/// Field schema plus classification settings: everything needed to turn a
/// collated outlier into a condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub schema: FieldSchema,
    pub config: ClassifyConfig,
}

impl Classifier {
    pub fn new(schema: FieldSchema, config: ClassifyConfig) -> Result<Self, RuleError> {
        schema.validate().map_err(RuleError::Domain)?;
        if !(config.ratio_epsilon > 0.0) {
            return Err(RuleError::InvalidConfig(format!(
                "ratio_epsilon must be positive, got {}",
                config.ratio_epsilon
            )));
        }
        Ok(Self { schema, config })
    }

    pub fn n_fields(&self) -> usize {
        self.schema.len()
    }

    /// Condition vector of `outlier`: field `i` compared against the
    /// reference of its context. Never produces a don't-care.
    pub fn formulate_vector(
        &self,
        outlier: &CollatedOutlier,
        table: &ReferenceTable,
    ) -> Result<(Vec<Condition>, VectorDiagnostics), RuleError> {
        if outlier.aggregated.len() != self.n_fields() {
            return Err(RuleError::Arity {
                expected: self.n_fields(),
                got: outlier.aggregated.len(),
            });
        }
        let mut diag = VectorDiagnostics::default();
        let mut vector = Vec::with_capacity(self.n_fields());
        for (i, (field, value)) in self.schema.fields.iter().zip(&outlier.aggregated).enumerate() {
            let entry = table.get(&field.name, &outlier.cell_id, &outlier.region_id);
            let condition = match (value, entry) {
                (_, None) => {
                    if self.config.missing_reference == GapPolicy::Error {
                        return Err(RuleError::MissingReference {
                            field: field.name.clone(),
                            cell_id: outlier.cell_id.clone(),
                        });
                    }
                    diag.missing_reference.push(i);
                    Condition::Approx
                }
                (None, Some(_)) => {
                    diag.imputed_missing.push(i);
                    Condition::Approx
                }
                (Some(x), Some(e)) => classify_condition(*x, e.reference, field, self.config.ratio_epsilon),
            };
            vector.push(condition);
        }
        Ok((vector, diag))
    }
}
