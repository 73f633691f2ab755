mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rulemine_core::collation::{collate_batch, CollationConfig};
use rulemine_core::domain::{
    vector_string, Aggregation, CollatedOutlier, Condition, FieldSchema, FieldSpec, KpiRecord, Response,
};
use rulemine_core::reference::{compute_measure, MeasureKind, MeasureSpec};
use rulemine_core::rules::{
    classify_condition, rule_matches, Occurrence, Probe, RuleSetDocument, RULESET_SCHEMA_VERSION,
};
use rulemine_core::{Rule, RuleSet, RuleStatus};

use common::*;

fn dyadic(range: std::ops::RangeInclusive<i64>) -> impl Strategy<Value = f64> {
    range.prop_map(|v| v as f64 / 1024.0)
}

fn condition() -> impl Strategy<Value = Condition> {
    prop_oneof![Just(Condition::Lt), Just(Condition::Approx), Just(Condition::Gt)]
}

fn vectors(n: usize, max: usize) -> impl Strategy<Value = Vec<Vec<Condition>>> {
    prop::collection::vec(prop::collection::vec(condition(), n), 0..max)
}

fn occurrences(vs: &[Vec<Condition>]) -> Vec<Occurrence> {
    vs.iter()
        .enumerate()
        .map(|(i, v)| Occurrence {
            outlier: CollatedOutlier {
                cell_id: format!("c{i}"),
                region_id: "r".into(),
                t_start: t0(),
                t_end: t0(),
                aggregated: vec![Some(0.0); v.len()],
                duration: 1,
            },
            vector: v.clone(),
        })
        .collect()
}

proptest! {
    #[test]
    fn linear_translation_invariance(
        x in dyadic(-1 << 24..=1 << 24),
        r in dyadic(-1 << 24..=1 << 24),
        d in dyadic(-1 << 24..=1 << 24),
        theta in dyadic(1..=1 << 20),
    ) {
        let f = FieldSpec::linear("f", Aggregation::Mean, theta);
        prop_assert_eq!(classify_condition(x, r, &f, 1e-9), classify_condition(x + d, r + d, &f, 1e-9));
    }

    #[test]
    fn exponential_scale_invariance(
        x in dyadic(1..=1 << 30),
        r in dyadic(1..=1 << 30),
        k in -30i32..=30,
        theta in dyadic(1025..=1 << 14),
    ) {
        let f = FieldSpec::exponential("f", Aggregation::Mean, theta);
        let c = 2f64.powi(k);
        prop_assert_eq!(classify_condition(x, r, &f, 1e-9), classify_condition(c * x, c * r, &f, 1e-9));
    }

    #[test]
    fn classification_is_exclusive_and_never_dont_care(
        x in -1e6f64..1e6,
        r in -1e6f64..1e6,
        theta in 0.001f64..1e3,
        exponential: bool,
    ) {
        let f = if exponential {
            FieldSpec::exponential("f", Aggregation::Mean, 1.0 + theta)
        } else {
            FieldSpec::linear("f", Aggregation::Mean, theta)
        };
        let c = classify_condition(x, r, &f, 1e-9);
        prop_assert_ne!(c, Condition::DontCare);
        prop_assert_eq!(c, oracle_classify(x, r, &f, 1e-9));
    }

    #[test]
    fn generation_conserves_counts(vs in vectors(4, 80)) {
        let set = RuleSet::from_vectors(vs.iter().cloned(), t0());
        prop_assert_eq!(set.rules().iter().map(|r| r.count).sum::<u64>(), vs.len() as u64);
        let keys: BTreeSet<String> = vs.iter().map(|v| vector_string(v)).collect();
        prop_assert_eq!(set.len(), keys.len());
        prop_assert!(set.rules().iter().all(|r| r.dont_care_count() == 0));
    }

    #[test]
    fn keys_stay_unique_under_split_and_combine(
        vs in vectors(5, 60),
        ops in prop::collection::vec((0usize..100, prop::collection::vec(prop::collection::btree_set(0usize..5, 1..5), 1..4), any::<bool>()), 0..12),
    ) {
        let occ = occurrences(&vs);
        let mut set = RuleSet::from_vectors(vs.iter().cloned(), t0());
        for (pick, masks, combine) in ops {
            let unappraised: Vec<String> = set.unappraised().map(|r| r.id.clone()).collect();
            if unappraised.is_empty() {
                break;
            }
            let id = &unappraised[pick % unappraised.len()];
            if combine {
                let appraised: Vec<String> = set.appraised().map(|r| r.id.clone()).collect();
                if let Some(target) = appraised.first() {
                    let _ = set.combine_rules(id, target);
                } else {
                    let _ = set.assign_response(id, Response::default_alarm(), Vec::new());
                }
            } else {
                let masks: Vec<Vec<usize>> = masks.into_iter().map(|m| m.into_iter().collect()).collect();
                set.split_rule(id, &masks, t0()).unwrap();
            }
            prop_assert!(set.check_unique_keys());
        }
        set.recount(&occ);
        for rule in set.rules() {
            let brute = occ.iter().filter(|o| oracle_matches(rule, &o.vector, 1, &o.outlier.aggregated)).count() as u64;
            prop_assert_eq!(rule.count, brute);
        }
    }

    #[test]
    fn most_specific_rule_wins(
        v in prop::collection::vec(condition(), 5),
        masks in prop::collection::vec(prop::collection::btree_set(0usize..5, 0..=5), 1..8),
        noise in vectors(5, 6),
    ) {
        let mut candidates: Vec<Vec<Condition>> = masks
            .iter()
            .map(|m| (0..5).map(|i| if m.contains(&i) { v[i] } else { Condition::DontCare }).collect())
            .collect();
        candidates.extend(noise);
        let mut seen = BTreeSet::new();
        candidates.retain(|c| seen.insert(vector_string(c)));
        let rules = candidates
            .into_iter()
            .enumerate()
            .map(|(i, conditions)| Rule {
                id: format!("r{i:05}"),
                conditions,
                extended: Vec::new(),
                count: 0,
                status: RuleStatus::Appraised,
                response: Response::default_alarm(),
                created_at: t0(),
            })
            .collect();
        let fields = (0..5).map(|i| FieldSpec::linear(format!("f{i}"), Aggregation::Mean, 1.0)).collect();
        let set = RuleSet::from_document(RuleSetDocument { schema_version: RULESET_SCHEMA_VERSION, fields, rules }).unwrap();
        let aggregated = vec![Some(0.0); 5];
        let probe = Probe { conditions: &v, duration: 1, aggregated: &aggregated };
        let specified = |r: &Rule| -> BTreeSet<usize> {
            (0..5).filter(|i| r.conditions[*i] != Condition::DontCare).collect()
        };
        let matching: Vec<_> = set.appraised().filter(|r| rule_matches(r, &probe)).collect();
        match set.match_rule(&probe) {
            None => prop_assert!(matching.is_empty()),
            Some(best) => {
                for other in &matching {
                    let so = specified(other);
                    let sb = specified(best);
                    prop_assert!(!(so.is_superset(&sb) && so != sb));
                }
            }
        }
    }

    #[test]
    fn batch_collation_conserves_duration(
        slots in prop::collection::btree_set((0usize..4, 0i64..200), 0..150),
    ) {
        let schema = FieldSchema::new(vec![FieldSpec::linear("a", Aggregation::Max, 1.0)]).unwrap();
        let mut records: Vec<KpiRecord> = slots
            .iter()
            .map(|(c, s)| KpiRecord {
                timestamp: t0() + minutes(15 * s),
                cell_id: format!("c{c}"),
                region_id: "r".into(),
                values: vec![Some(*s as f64)],
            })
            .collect();
        records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cell_id.cmp(&b.cell_id)));
        let groups = collate_batch(&records, &schema, &CollationConfig::default()).unwrap();
        prop_assert_eq!(groups.iter().map(|g| g.duration as usize).sum::<usize>(), records.len());
        for g in &groups {
            // consecutive slots, so the span is exactly duration - 1 intervals
            prop_assert_eq!(g.t_end - g.t_start, minutes(15 * (g.duration as i64 - 1)));
            prop_assert_eq!(g.aggregated[0], Some(((g.t_end - t0()).num_minutes() / 15) as f64));
        }
    }

    #[test]
    fn measures_lie_within_sample_range(values in prop::collection::vec(-1e6f64..1e6, 1..100), kind in 0usize..5) {
        let kind = [MeasureKind::Mean, MeasureKind::Median, MeasureKind::Mode, MeasureKind::MeanAboveMedian, MeasureKind::MeanPlusStd][kind];
        let m = compute_measure(&values, MeasureSpec::new(kind)).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-6 * (hi.abs().max(lo.abs()) + 1.0);
        match kind {
            // one std above the mean can exceed the max; mode is rounded
            MeasureKind::MeanPlusStd => prop_assert!(m >= lo - slack),
            MeasureKind::Mode => prop_assert!(m >= lo - 0.005 * lo.abs() - slack && m <= hi + 0.005 * hi.abs() + slack),
            _ => prop_assert!(m >= lo - slack && m <= hi + slack),
        }
    }
}
