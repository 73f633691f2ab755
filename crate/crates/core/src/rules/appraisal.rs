//! The four expert actions on unappraised rules (assign, split, combine,
//! whitelist) and critical-frequency auto-whitelisting.

use serde::{Deserialize, Serialize};

use crate::domain::{Condition, ExtendedCondition, Response, ResponseKind, RuleStatus, Timestamp};

use super::ruleset::{Occurrence, RuleSet};
use super::RuleError;

/// An appraisal decision, in the shape the HTTP API accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AppraisalAction {
    Assign {
        response: Response,
        #[serde(default)]
        extended: Vec<ExtendedCondition>,
    },
    Split {
        masks: Vec<Vec<usize>>,
    },
    Combine {
        target_rule_id: String,
    },
    Whitelist,
}

impl AppraisalAction {
    pub fn name(&self) -> &'static str {
        match self {
            AppraisalAction::Assign { .. } => "assign",
            AppraisalAction::Split { .. } => "split",
            AppraisalAction::Combine { .. } => "combine",
            AppraisalAction::Whitelist => "whitelist",
        }
    }
}

/// Keys before and after an action, for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppraisalOutcome {
    pub action: String,
    pub rule_id: String,
    pub before_keys: Vec<String>,
    pub after_keys: Vec<String>,
    /// Rules created or modified by the action.
    pub affected: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoWhitelistOutcome {
    pub whitelisted: Vec<String>,
    pub default_alarmed: Vec<String>,
    /// Unappraised rules folded into an existing appraised rule with the same key.
    pub merged: Vec<(String, String)>,
}

impl RuleSet {
    fn require_unappraised(&self, id: &str) -> Result<usize, RuleError> {
        let pos = self.position(id)?;
        let status = self.rules()[pos].status;
        if status != RuleStatus::Unappraised {
            return Err(RuleError::NotUnappraised {
                id: id.to_owned(),
                status,
            });
        }
        Ok(pos)
    }

    fn ensure_free_appraised_key(&self, key: &str, except: &str) -> Result<(), RuleError> {
        match self.find_key(key, true, Some(except)) {
            Some(existing) => Err(RuleError::KeyConflict {
                key: key.to_owned(),
                existing: existing.id.clone(),
            }),
            None => Ok(()),
        }
    }

    /// Moves an unappraised rule to the appraised set with `response`,
    /// optionally extending it with custom conditions first.
    pub fn assign_response(
        &mut self,
        id: &str,
        response: Response,
        extended: Vec<ExtendedCondition>,
    ) -> Result<AppraisalOutcome, RuleError> {
        let pos = self.require_unappraised(id)?;
        response.validate()?;
        if response.kind == ResponseKind::Null {
            return Err(RuleError::NullAssignment);
        }
        let n = self.rules()[pos].conditions.len();
        for e in &extended {
            e.validate(n)?;
        }
        let before = self.rules()[pos].canonical_key();
        let mut candidate = self.rules()[pos].clone();
        candidate.extended.extend(extended);
        let after = candidate.canonical_key();
        self.ensure_free_appraised_key(&after, id)?;
        candidate.status = RuleStatus::Appraised;
        candidate.response = response;
        self.rules_mut()[pos] = candidate;
        Ok(AppraisalOutcome {
            action: "assign".into(),
            rule_id: id.to_owned(),
            before_keys: vec![before],
            after_keys: vec![after],
            affected: vec![id.to_owned()],
        })
    }

    /// Marks an unappraised rule as not anomalous: it joins the appraised
    /// set with a null response.
    pub fn whitelist_rule(&mut self, id: &str) -> Result<AppraisalOutcome, RuleError> {
        let pos = self.require_unappraised(id)?;
        let key = self.rules()[pos].canonical_key();
        self.ensure_free_appraised_key(&key, id)?;
        let rule = &mut self.rules_mut()[pos];
        rule.status = RuleStatus::Whitelisted;
        rule.response = Response::null();
        Ok(AppraisalOutcome {
            action: "whitelist".into(),
            rule_id: id.to_owned(),
            before_keys: vec![key.clone()],
            after_keys: vec![key],
            affected: vec![id.to_owned()],
        })
    }

    /// Replaces an unappraised rule by one child per mask. A child keeps the
    /// parent's conditions at the masked positions and don't-cares elsewhere.
    /// Children that collide with an existing unappraised key merge into it.
    /// Child counts start at the parent's; call [`RuleSet::recount`] afterwards.
    pub fn split_rule(
        &mut self,
        id: &str,
        masks: &[Vec<usize>],
        now: Timestamp,
    ) -> Result<AppraisalOutcome, RuleError> {
        let pos = self.require_unappraised(id)?;
        if masks.is_empty() {
            return Err(RuleError::NoMasks);
        }
        let parent = self.rules()[pos].clone();
        let n = parent.conditions.len();
        for (i, mask) in masks.iter().enumerate() {
            if mask.is_empty() {
                return Err(RuleError::EmptyMask(i));
            }
            if let Some(&index) = mask.iter().find(|&&j| j >= n) {
                return Err(RuleError::MaskIndexOutOfRange { index, n });
            }
        }

        let parent_key = parent.canonical_key();
        self.rules_mut().remove(pos);
        let mut after_keys = Vec::new();
        let mut affected = Vec::new();
        for mask in masks {
            let conditions: Vec<Condition> = (0..n)
                .map(|j| {
                    if mask.contains(&j) {
                        parent.conditions[j]
                    } else {
                        Condition::DontCare
                    }
                })
                .collect();
            // field comparisons survive only when both operands stay in the mask
            let extended: Vec<ExtendedCondition> = parent
                .extended
                .iter()
                .filter(|e| match e {
                    ExtendedCondition::Duration { .. } => true,
                    ExtendedCondition::FieldCmp { lhs, rhs, .. } => mask.contains(lhs) && mask.contains(rhs),
                })
                .cloned()
                .collect();
            let key = crate::domain::canonical_key(&conditions, &extended);
            let child_id = if let Some(existing) = self.find_key(&key, false, None) {
                existing.id.clone()
            } else if key == parent_key {
                // identity split keeps the original rule
                self.rules_mut().insert(pos, parent.clone());
                parent.id.clone()
            } else {
                self.push_unappraised(conditions, extended, parent.count, now)
            };
            if !affected.contains(&child_id) {
                affected.push(child_id);
                after_keys.push(key);
            }
        }
        Ok(AppraisalOutcome {
            action: "split".into(),
            rule_id: id.to_owned(),
            before_keys: vec![parent_key],
            after_keys,
            affected,
        })
    }

    /// Folds an unappraised rule into an appraised target, generalising the
    /// target to a don't-care wherever the two vectors differ. The target
    /// keeps its response and creation time.
    pub fn combine_rules(&mut self, id: &str, target_id: &str) -> Result<AppraisalOutcome, RuleError> {
        let src_pos = self.require_unappraised(id)?;
        let tgt_pos = self.position(target_id)?;
        if !self.rules()[tgt_pos].status.in_appraised_set() {
            return Err(RuleError::TargetNotAppraised(target_id.to_owned()));
        }
        let source = self.rules()[src_pos].clone();
        let target = self.rules()[tgt_pos].clone();
        if source.conditions.len() != target.conditions.len() {
            return Err(RuleError::Arity {
                expected: target.conditions.len(),
                got: source.conditions.len(),
            });
        }
        let conditions: Vec<Condition> = target
            .conditions
            .iter()
            .zip(&source.conditions)
            .map(|(t, s)| if t == s { *t } else { Condition::DontCare })
            .collect();
        let new_key = crate::domain::canonical_key(&conditions, &target.extended);
        self.ensure_free_appraised_key(&new_key, target_id)?;

        let before_keys = vec![source.canonical_key(), target.canonical_key()];
        {
            let t = &mut self.rules_mut()[tgt_pos];
            t.conditions = conditions;
            t.count += source.count;
        }
        self.rules_mut().remove(src_pos);
        Ok(AppraisalOutcome {
            action: "combine".into(),
            rule_id: id.to_owned(),
            before_keys,
            after_keys: vec![new_key],
            affected: vec![target_id.to_owned()],
        })
    }

    /// Whitelists every unappraised rule whose count is strictly above
    /// `critical_frequency` and assigns `default_response` to the rest.
    pub fn auto_whitelist(
        &mut self,
        critical_frequency: u64,
        default_response: &Response,
    ) -> Result<AutoWhitelistOutcome, RuleError> {
        if critical_frequency < 1 {
            return Err(RuleError::InvalidCriticalFrequency);
        }
        let mut outcome = AutoWhitelistOutcome::default();
        let ids: Vec<String> = self.unappraised().map(|r| r.id.clone()).collect();
        for id in ids {
            let pos = self.position(&id)?;
            let key = self.rules()[pos].canonical_key();
            if let Some(existing) = self.find_key(&key, true, None) {
                let existing_id = existing.id.clone();
                let count = self.rules()[pos].count;
                let epos = self.position(&existing_id)?;
                self.rules_mut()[epos].count += count;
                self.rules_mut().remove(pos);
                outcome.merged.push((id, existing_id));
                continue;
            }
            let rule = &mut self.rules_mut()[pos];
            if rule.count > critical_frequency {
                rule.status = RuleStatus::Whitelisted;
                rule.response = Response::null();
                outcome.whitelisted.push(id);
            } else {
                rule.status = RuleStatus::Appraised;
                rule.response = default_response.clone();
                outcome.default_alarmed.push(id);
            }
        }
        Ok(outcome)
    }

    /// Applies one appraisal action. Split and combine are followed by a
    /// recount against `occurrences`.
    pub fn apply_appraisal(
        &mut self,
        rule_id: &str,
        action: &AppraisalAction,
        occurrences: &[Occurrence],
        now: Timestamp,
    ) -> Result<AppraisalOutcome, RuleError> {
        let outcome = match action {
            AppraisalAction::Assign { response, extended } => {
                self.assign_response(rule_id, response.clone(), extended.clone())?
            }
            AppraisalAction::Whitelist => self.whitelist_rule(rule_id)?,
            AppraisalAction::Split { masks } => self.split_rule(rule_id, masks, now)?,
            AppraisalAction::Combine { target_rule_id } => self.combine_rules(rule_id, target_rule_id)?,
        };
        if matches!(action, AppraisalAction::Split { .. } | AppraisalAction::Combine { .. }) {
            self.recount(occurrences);
        }
        Ok(outcome)
    }
}
