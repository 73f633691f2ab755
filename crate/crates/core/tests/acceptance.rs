//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulemine_core::collation::{collate_batch, CollationConfig, Collator, NotificationMode};
use rulemine_core::dataset::Dataset;
use rulemine_core::domain::{
    vector_string, Aggregation, CollatedOutlier, Condition, ContextKey, ContextLevel, FieldSchema, FieldSpec,
    KpiRecord, Response, RuleStatus, TimeWindow,
};
use rulemine_core::pipeline::{replay, train, Bundle, MemorySink, PipelineConfig, Runtime, RuntimeStats};
use rulemine_core::reference::{DriftConfig, MeasureSpec, RefEntry};
use rulemine_core::rules::{classify_condition, export_csv, generate_ruleset, rule_matches, AppraisalAction};
use rulemine_core::synthetic::generate;
use rulemine_core::{Classifier, ClassifyConfig, ReferenceTable, RuleSet};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Trained {
    config: PipelineConfig,
    dataset: Dataset,
    bundle: Bundle,
}

fn rule_compression(trained: &mut Option<Trained>) -> Outcome {
    let started = Instant::now();
    let spec = scenario(0.0, 7);
    let (dataset, truth) = generate(&spec).map_err(|e| e.to_string())?;
    let config = scenario_config();
    let bundle = train(&dataset, &config, None, t0() + chrono::Duration::days(30)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let rules = bundle.rules.rules();
    ensure!(rules.len() == 5, "noiseless: expected 5 rules, got {}", rules.len());
    ensure!(
        rules.iter().all(|r| r.status == RuleStatus::Unappraised),
        "generated rules must be unappraised"
    );
    let sum: u64 = rules.iter().map(|r| r.count).sum();
    ensure!(
        truth.len() == 400,
        "scenario must inject 400 occurrences, got {}",
        truth.len()
    );
    ensure!(
        sum == truth.len() as u64,
        "count sum {sum} != ground truth {}",
        truth.len()
    );
    ensure!(
        sum == bundle.occurrences.len() as u64,
        "count sum {sum} != collated occurrences"
    );
    let keys: BTreeSet<String> = rules.iter().map(|r| r.canonical_key()).collect();
    let expected: BTreeSet<String> = pattern_directions().iter().map(|d| expected_signature(d)).collect();
    ensure!(
        keys == expected,
        "rule keys {keys:?} != injected signatures {expected:?}"
    );
    ensure!(elapsed < Duration::from_secs(30), "training took {elapsed:?}");

    // Noisy variant: the detector's false-positive rate must stay under 0.5%,
    // and at most one extra rule may appear.
    let noisy_spec = scenario(2.0, 11);
    let (noisy, noisy_truth) = generate(&noisy_spec).map_err(|e| e.to_string())?;
    let noisy_bundle = train(&noisy, &config, None, t0() + chrono::Duration::days(30)).map_err(|e| e.to_string())?;
    let step = chrono::Duration::minutes(15);
    let injected: BTreeSet<(String, chrono::DateTime<chrono::Utc>)> = noisy_truth
        .iter()
        .flat_map(|g| {
            let mut t = g.t_start;
            let mut v = Vec::new();
            while t <= g.t_end {
                v.push((g.cell_id.clone(), t));
                t += step;
            }
            v
        })
        .collect();
    let false_pos = noisy_bundle
        .outliers
        .entries
        .iter()
        .filter(|e| !injected.contains(*e))
        .count();
    let negatives = noisy.len() - injected.len();
    let fp_rate = false_pos as f64 / negatives as f64;
    ensure!(fp_rate < 0.005, "noisy detector false-positive rate {fp_rate}");
    let n_noisy = noisy_bundle.rules.len();
    ensure!(n_noisy <= 6, "noisy: {n_noisy} rules, at most 6 allowed");

    *trained = Some(Trained {
        config,
        dataset,
        bundle,
    });
    Ok(format!(
        "5 rules, counts sum {sum}, trained in {:.2}s; noisy: {n_noisy} rules, fp rate {fp_rate:.5}",
        elapsed.as_secs_f64()
    ))
}

fn algorithm_oracle() -> Outcome {
    let window = TimeWindow::new(t0(), t0() + chrono::Duration::days(1)).unwrap();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let fields: Vec<FieldSpec> = (0..n)
            .map(|i| {
                if rng.random_bool(0.5) {
                    FieldSpec::linear(format!("f{i}"), Aggregation::Mean, rng.random_range(1.0..10.0))
                } else {
                    FieldSpec::exponential(format!("f{i}"), Aggregation::Mean, rng.random_range(1.5..4.0))
                }
            })
            .collect();
        let refs: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let entries = fields
            .iter()
            .zip(&refs)
            .map(|(f, r)| {
                (
                    ContextKey::for_level(ContextLevel::Kpi, &f.name, "", ""),
                    RefEntry {
                        reference: *r,
                        sample_count: 1,
                        median: *r,
                        mad: 0.0,
                    },
                )
            })
            .collect();
        let table = ReferenceTable {
            level: ContextLevel::Kpi,
            measure: MeasureSpec::default(),
            window,
            computed_at: t0(),
            entries,
            gaps: Vec::new(),
        };
        let n_records = rng.random_range(0..=200);
        let outliers: Vec<CollatedOutlier> = (0..n_records)
            .map(|i| CollatedOutlier {
                cell_id: format!("c{}", i % 7),
                region_id: "r0".into(),
                t_start: t0() + minutes(15 * i as i64),
                t_end: t0() + minutes(15 * i as i64),
                aggregated: fields
                    .iter()
                    .zip(&refs)
                    .map(|(f, r)| {
                        if rng.random_bool(0.05) {
                            return None;
                        }
                        let k = rng.random_range(-1..=1) as f64;
                        Some(match f.scale {
                            rulemine_core::domain::Scale::Linear => r + k * 2.0 * f.theta,
                            rulemine_core::domain::Scale::Exponential => r * (f.theta * 2.0).powf(k),
                        })
                    })
                    .collect(),
                duration: 1,
            })
            .collect();

        let classifier = Classifier::new(FieldSchema::new(fields.clone()).unwrap(), ClassifyConfig::default())
            .map_err(|e| e.to_string())?;
        let (set, _) = generate_ruleset(&outliers, &table, &classifier, t0()).map_err(|e| e.to_string())?;

        let mut oracle: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, o) in outliers.iter().enumerate() {
            let v: Vec<Condition> = fields
                .iter()
                .zip(&refs)
                .zip(&o.aggregated)
                .map(|((f, r), x)| match x {
                    Some(x) => oracle_classify(*x, *r, f, 1e-9),
                    None => Condition::Approx,
                })
                .collect();
            oracle.entry(vector_string(&v)).or_default().push(i);
        }
        let got: BTreeMap<String, usize> = set
            .rules()
            .iter()
            .map(|r| (r.canonical_key(), r.count as usize))
            .collect();
        let want: BTreeMap<String, usize> = oracle.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        ensure!(got == want, "seed {seed}: {got:?} != {want:?}");
        ensure!(got.len() == set.len(), "seed {seed}: duplicate keys");
    }
    Ok("100 random outlier sets match the brute-force grouping".into())
}

fn dyadic<R: Rng>(rng: &mut R, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo..=hi) as f64 / 256.0
}

fn classification_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let eps = 1e-9;
    for i in 0..10_000 {
        // Linear: translation invariance and the boundary.
        let x = dyadic(&mut rng, -1 << 20, 1 << 20);
        let r = dyadic(&mut rng, -1 << 20, 1 << 20);
        let theta = dyadic(&mut rng, 1, 1 << 16);
        let delta = dyadic(&mut rng, -1 << 20, 1 << 20);
        let lin = FieldSpec::linear("f", Aggregation::Mean, theta);
        let c = classify_condition(x, r, &lin, eps);
        ensure!(
            classify_condition(x + delta, r + delta, &lin, eps) == c,
            "#{i} translation invariance x={x} r={r} theta={theta} delta={delta}"
        );
        ensure!(c == oracle_classify(x, r, &lin, eps), "#{i} linear oracle x={x} r={r}");
        ensure!(c != Condition::DontCare, "#{i} classification produced a don't-care");
        ensure!(!(x - r > theta && r - x > theta), "#{i} GT and LT both hold");
        ensure!(
            classify_condition(r + theta, r, &lin, eps) == Condition::Approx
                && classify_condition(r - theta, r, &lin, eps) == Condition::Approx,
            "#{i} linear boundary r={r} theta={theta}"
        );

        // Exponential: scale invariance and the boundary.
        let x = dyadic(&mut rng, 1, 1 << 24);
        let r = dyadic(&mut rng, 1, 1 << 24);
        let theta = 1.0 + dyadic(&mut rng, 1, 1 << 10);
        let scale = 2f64.powi(rng.random_range(-20..=20));
        let exp = FieldSpec::exponential("f", Aggregation::Mean, theta);
        let c = classify_condition(x, r, &exp, eps);
        ensure!(
            classify_condition(x * scale, r * scale, &exp, eps) == c,
            "#{i} scale invariance x={x} r={r} theta={theta} c={scale}"
        );
        ensure!(
            c == oracle_classify(x, r, &exp, eps),
            "#{i} exponential oracle x={x} r={r}"
        );
        ensure!(!(x / r > theta && r / x > theta), "#{i} ratio GT and LT both hold");
        let b = 2f64.powi(rng.random_range(-4..=4));
        let t2 = 2f64.powi(rng.random_range(1..=4));
        let exp2 = FieldSpec::exponential("f", Aggregation::Mean, t2);
        ensure!(
            classify_condition(b * t2, b, &exp2, eps) == Condition::Approx
                && classify_condition(b, b * t2, &exp2, eps) == Condition::Approx,
            "#{i} ratio boundary b={b} theta={t2}"
        );
    }
    Ok("10000 triples: translation, scale, exclusivity, boundary".into())
}

fn collation_equivalence() -> Outcome {
    let schema = FieldSchema::new(vec![
        FieldSpec::linear("a", Aggregation::Mean, 1.0),
        FieldSpec::linear("b", Aggregation::Max, 1.0),
        FieldSpec::linear("c", Aggregation::Min, 1.0),
    ])
    .unwrap();
    let mut total = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n_cells = rng.random_range(1..=5);
        let mut records = Vec::new();
        for c in 0..n_cells {
            let mut slot = rng.random_range(0..4i64);
            for _ in 0..rng.random_range(0..60) {
                records.push(KpiRecord {
                    timestamp: t0() + minutes(15 * slot),
                    cell_id: format!("c{c}"),
                    region_id: "r".into(),
                    values: (0..3)
                        .map(|_| {
                            if rng.random_bool(0.1) {
                                None
                            } else {
                                Some(dyadic(&mut rng, -4096, 4096))
                            }
                        })
                        .collect(),
                });
                slot += match rng.random_range(0..10) {
                    0..=5 => 1,
                    6 | 7 => 2,
                    _ => rng.random_range(3..20),
                };
            }
        }
        records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cell_id.cmp(&b.cell_id)));
        total += records.len();
        let cfg = CollationConfig::default();
        let batch = collate_batch(&records, &schema, &cfg).map_err(|e| e.to_string())?;

        let mut delayed = Collator::new(&schema, cfg).unwrap();
        let mut streamed = Vec::new();
        for r in &records {
            streamed.extend(delayed.push(r, r.timestamp).map_err(|e| e.to_string())?.closed);
        }
        streamed.extend(delayed.flush());
        rulemine_core::collation::sort_occurrences(&mut streamed);
        ensure!(
            streamed == batch,
            "seed {seed}: delayed stream groups differ from batch"
        );

        let mut eager = Collator::new(
            &schema,
            CollationConfig {
                mode: NotificationMode::Eager,
                ..cfg
            },
        )
        .unwrap();
        let mut snapshots = 0;
        let mut eager_closed = Vec::new();
        for r in &records {
            let e = eager.push(r, r.timestamp).map_err(|e| e.to_string())?;
            snapshots += e.notifications(NotificationMode::Eager).len();
            eager_closed.extend(e.closed);
        }
        eager_closed.extend(eager.flush());
        rulemine_core::collation::sort_occurrences(&mut eager_closed);
        ensure!(
            snapshots == records.len(),
            "seed {seed}: {snapshots} eager emissions for {} records",
            records.len()
        );
        ensure!(
            eager_closed == batch,
            "seed {seed}: eager final groups differ from batch"
        );
        let durations: u32 = batch.iter().map(|g| g.duration).sum();
        ensure!(
            durations as usize == records.len(),
            "seed {seed}: duration not conserved"
        );
    }
    Ok(format!("100 streams, {total} records"))
}

fn round_trip(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("needs the trained scenario")?;
    let mut rules = t.bundle.rules.clone();
    let ids: Vec<String> = rules.rules().iter().map(|r| r.id.clone()).collect();
    for id in &ids {
        rules
            .assign_response(id, Response::default_alarm(), Vec::new())
            .map_err(|e| e.to_string())?;
    }
    let mut rt = Runtime::new(
        t.config.clone(),
        t.bundle.references.clone(),
        rules.clone(),
        Box::new(MemorySink::new()),
    )
    .map_err(|e| e.to_string())?;
    let report = replay(&mut rt, &t.dataset, Some(&t.bundle.outliers)).map_err(|e| e.to_string())?;
    let RuntimeStats {
        discovered, matched, ..
    } = report.stats;
    ensure!(discovered == 0, "{discovered} discoveries on replay");
    ensure!(
        report.events.len() == t.bundle.occurrences.len(),
        "{} events for {} training occurrences",
        report.events.len(),
        t.bundle.occurrences.len()
    );
    let by_key: BTreeMap<String, String> = rules
        .rules()
        .iter()
        .map(|r| (r.canonical_key(), r.id.clone()))
        .collect();
    let training: BTreeMap<String, String> = t
        .bundle
        .occurrences
        .iter()
        .map(|o| (o.outlier.group_id(), vector_string(&o.vector)))
        .collect();
    for e in &report.events {
        let key = training
            .get(&e.group_id)
            .ok_or_else(|| format!("event group {} not in training", e.group_id))?;
        ensure!(e.vector_string() == *key, "group {} vector changed", e.group_id);
        ensure!(
            e.matched_rule_id.as_ref() == by_key.get(key),
            "group {} matched {:?}, generated by {:?}",
            e.group_id,
            e.matched_rule_id,
            by_key.get(key)
        );
    }
    Ok(format!("{matched} events, all matched to their generating rule"))
}

fn split_combine_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 7;
    let occurrences: Vec<rulemine_core::rules::Occurrence> = (0..300)
        .map(|i| {
            let o = CollatedOutlier {
                cell_id: format!("c{}", i % 9),
                region_id: "r".into(),
                t_start: t0() + minutes(15 * i),
                t_end: t0() + minutes(15 * i),
                aggregated: vec![Some(0.0); n],
                duration: 1,
            };
            // small alphabet per position so masks collide
            let vector = (0..n)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        Condition::Gt
                    } else {
                        random_vector(&mut rng, 1)[0]
                    }
                })
                .collect();
            rulemine_core::rules::Occurrence { outlier: o, vector }
        })
        .collect();
    let base = RuleSet::from_vectors(occurrences.iter().map(|o| o.vector.clone()), t0());
    let target = base.listing(None)[0].id.clone();
    let shapes: [Vec<Vec<usize>>; 3] = [
        vec![vec![0, 1, 2, 3], vec![4, 5, 6]],
        vec![vec![0, 1, 4, 5, 6], vec![0, 1, 2, 3]],
        vec![vec![0, 2, 4, 6], vec![1, 3, 5]],
    ];
    for masks in &shapes {
        let mut set = base.clone();
        set.apply_appraisal(
            &target,
            &AppraisalAction::Split { masks: masks.clone() },
            &occurrences,
            t0(),
        )
        .map_err(|e| e.to_string())?;
        ensure!(set.check_unique_keys(), "split {masks:?} left duplicate keys");
        for rule in set.rules() {
            let brute = occurrences
                .iter()
                .filter(|o| oracle_matches(rule, &o.vector, o.outlier.duration, &o.outlier.aggregated))
                .count() as u64;
            ensure!(
                rule.count == brute,
                "split {masks:?}: rule {} count {} != {brute}",
                rule.canonical_key(),
                rule.count
            );
        }
        for mask in masks {
            let key: Vec<Condition> = (0..n)
                .map(|i| {
                    if mask.contains(&i) {
                        base.get(&target).unwrap().conditions[i]
                    } else {
                        Condition::DontCare
                    }
                })
                .collect();
            ensure!(
                set.rules().iter().any(|r| r.conditions == key),
                "split {masks:?}: child {} missing",
                vector_string(&key)
            );
        }
    }

    // Combine [a,b,c,d1] into appraised [a,b,c,d2].
    use Condition::*;
    let small: Vec<rulemine_core::rules::Occurrence> = (0..60)
        .map(|i| {
            let v = match i % 4 {
                0 => vec![Gt, Lt, Approx, Gt],
                1 => vec![Gt, Lt, Approx, Lt],
                2 => vec![Gt, Lt, Approx, Approx],
                _ => vec![Lt, Lt, Approx, Gt],
            };
            rulemine_core::rules::Occurrence {
                outlier: CollatedOutlier {
                    cell_id: "c".into(),
                    region_id: "r".into(),
                    t_start: t0() + minutes(15 * i),
                    t_end: t0() + minutes(15 * i),
                    aggregated: vec![Some(0.0); 4],
                    duration: 1,
                },
                vector: v,
            }
        })
        .collect();
    let mut set = RuleSet::from_vectors(small.iter().map(|o| o.vector.clone()), t0());
    let id_of = |set: &RuleSet, v: &[Condition]| set.rules().iter().find(|r| r.conditions == v).map(|r| r.id.clone());
    let d1 = id_of(&set, &[Gt, Lt, Approx, Gt]).unwrap();
    let d2 = id_of(&set, &[Gt, Lt, Approx, Lt]).unwrap();
    let before: BTreeSet<usize> = small
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            [set.get(&d1).unwrap(), set.get(&d2).unwrap()]
                .iter()
                .any(|r| oracle_matches(r, &o.vector, 1, &o.outlier.aggregated))
        })
        .map(|(i, _)| i)
        .collect();
    set.assign_response(&d2, Response::default_alarm(), Vec::new())
        .map_err(|e| e.to_string())?;
    set.apply_appraisal(
        &d1,
        &AppraisalAction::Combine {
            target_rule_id: d2.clone(),
        },
        &small,
        t0(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(set.get(&d1).is_none(), "combined source still present");
    let combined = set.get(&d2).unwrap();
    ensure!(
        combined.conditions == vec![Gt, Lt, Approx, DontCare],
        "combined key {}",
        combined.canonical_key()
    );
    let after: BTreeSet<usize> = small
        .iter()
        .enumerate()
        .filter(|(_, o)| rule_matches(combined, &probe(&o.vector, &o.outlier)))
        .map(|(i, _)| i)
        .collect();
    ensure!(after.is_superset(&before), "combined rule lost matches");
    let union_plus: BTreeSet<usize> = small
        .iter()
        .enumerate()
        .filter(|(_, o)| oracle_matches(combined, &o.vector, 1, &o.outlier.aggregated))
        .map(|(i, _)| i)
        .collect();
    ensure!(after == union_plus, "combined match set differs from brute force");
    ensure!(
        combined.count == after.len() as u64,
        "combined count {} != {}",
        combined.count,
        after.len()
    );
    Ok(format!(
        "3 split shapes recounted exactly; combined rule matches {} occurrences ({} from the two originals)",
        after.len(),
        before.len()
    ))
}

fn auto_whitelist() -> Outcome {
    let vectors = [
        (vec![Condition::Gt, Condition::Gt], 120),
        (vec![Condition::Lt, Condition::Gt], 7),
        (vec![Condition::Approx, Condition::Lt], 3),
    ];
    let mut set = RuleSet::from_vectors(
        vectors.iter().flat_map(|(v, n)| std::iter::repeat_n(v.clone(), *n)),
        t0(),
    );
    let out = set
        .auto_whitelist(50, &Response::default_alarm())
        .map_err(|e| e.to_string())?;
    let status = |v: &[Condition]| {
        set.rules()
            .iter()
            .find(|r| r.conditions == v)
            .map(|r| (r.status, r.response.clone()))
    };
    ensure!(out.whitelisted.len() == 1, "whitelisted {:?}", out.whitelisted);
    ensure!(
        out.default_alarmed.len() == 2,
        "default alarmed {:?}",
        out.default_alarmed
    );
    ensure!(
        status(&vectors[0].0) == Some((RuleStatus::Whitelisted, Response::null())),
        "count-120 rule not whitelisted"
    );
    for (v, _) in &vectors[1..] {
        ensure!(
            status(v) == Some((RuleStatus::Appraised, Response::default_alarm())),
            "rule {} not default-alarmed",
            vector_string(v)
        );
    }
    ensure!(set.unappraised().count() == 0, "unappraised rules left");
    Ok("{120} whitelisted, {7, 3} default alarm".into())
}

fn concept_drift() -> Outcome {
    let mut cfg = PipelineConfig::new(vec![
        FieldSpec::linear("k0", Aggregation::Mean, 20.0),
        FieldSpec::linear("k1", Aggregation::Mean, 20.0),
    ]);
    cfg.detector = rulemine_core::pipeline::DetectorConfig::Builtin { z: 4.0 };
    cfg.drift = DriftConfig {
        window_length: Duration::from_secs(86_400),
        update_period: Duration::from_secs(86_400),
        exclude_outliers: false,
    };
    let day = |d: i64, k0: f64| -> Vec<KpiRecord> {
        (0..96)
            .flat_map(|s| {
                (0..4).map(move |c| KpiRecord {
                    timestamp: t0() + chrono::Duration::days(d) + minutes(15 * s),
                    cell_id: format!("c{c}"),
                    region_id: "r".into(),
                    values: vec![Some(k0), Some(50.0)],
                })
            })
            .collect()
    };
    let shift = 60.0;
    let training = Dataset::new(vec!["k0".into(), "k1".into()], day(0, 100.0));
    let bundle = train(&training, &cfg, None, t0() + chrono::Duration::days(1)).map_err(|e| e.to_string())?;
    ensure!(bundle.rules.is_empty(), "steady training data produced rules");
    let sink = MemorySink::new();
    let mut rt = Runtime::from_bundle(cfg.clone(), &bundle, Box::new(sink.clone())).map_err(|e| e.to_string())?;

    let probe_outlier = CollatedOutlier {
        cell_id: "c0".into(),
        region_id: "r".into(),
        t_start: t0(),
        t_end: t0(),
        aggregated: vec![Some(100.0 + shift), Some(50.0)],
        duration: 1,
    };
    let (before, _) = rt.evaluate(&probe_outlier).map_err(|e| e.to_string())?;
    ensure!(
        before == vec![Condition::Gt, Condition::Approx],
        "pre-refresh vector {}",
        vector_string(&before)
    );

    let mut events = Vec::new();
    for r in day(1, 100.0 + shift) {
        events.extend(
            rt.apply_step(&r, r.timestamp, rulemine_core::pipeline::Flag::Detect)
                .map_err(|e| e.to_string())?,
        );
    }
    let end = t0() + chrono::Duration::days(2);
    events.extend(rt.finish(end).map_err(|e| e.to_string())?);
    let alarms_before = sink.actions().len();
    ensure!(
        alarms_before > 0 && !events.is_empty(),
        "shifted values raised no alarm before refresh"
    );

    ensure!(
        rt.refresh_from_history(end).map_err(|e| e.to_string())?,
        "refresh did not run"
    );
    let (after, _) = rt.evaluate(&probe_outlier).map_err(|e| e.to_string())?;
    ensure!(
        after == vec![Condition::Approx, Condition::Approx],
        "post-refresh vector {}",
        vector_string(&after)
    );
    let mut late = Vec::new();
    for r in day(2, 100.0 + shift) {
        late.extend(
            rt.apply_step(&r, r.timestamp, rulemine_core::pipeline::Flag::Detect)
                .map_err(|e| e.to_string())?,
        );
    }
    late.extend(rt.finish(t0() + chrono::Duration::days(3)).map_err(|e| e.to_string())?);
    ensure!(late.is_empty(), "{} events after refresh", late.len());
    ensure!(sink.actions().len() == alarms_before, "alarms raised after refresh");
    Ok(format!("{alarms_before} alarms before refresh, 0 after"))
}

fn persistence(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("needs the trained scenario")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    t.bundle.write(&a).map_err(|e| e.to_string())?;
    let loaded = Bundle::load(&a).map_err(|e| e.to_string())?;
    ensure!(loaded.rules == t.bundle.rules, "rules changed on load");
    ensure!(loaded.references == t.bundle.references, "references changed on load");
    loaded.write(&b).map_err(|e| e.to_string())?;
    for name in ["rules.json", "references.json", "outliers.csv", "occurrences.json"] {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{name} not byte-identical after round trip");
    }

    let mut buf = Vec::new();
    export_csv(&t.bundle.rules, &t.bundle.fields, &mut buf).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    let n = t.bundle.fields.len();
    let mut rows = 0;
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let rule = t
            .bundle
            .rules
            .get(&row[0])
            .ok_or_else(|| format!("unknown rule {}", &row[0]))?;
        let glyphs: Vec<&str> = (1..=n).map(|i| &row[i]).collect();
        let want: Vec<&str> = rule.conditions.iter().map(|c| c.glyph()).collect();
        ensure!(glyphs == want, "rule {} glyphs {glyphs:?} != {want:?}", rule.id);
        ensure!(
            glyphs.iter().all(|g| ["+", "-", "0", "x"].contains(g)),
            "bad glyph in {glyphs:?}"
        );
        let count_col = header.iter().position(|h| h == "count").unwrap();
        ensure!(
            row[count_col] == rule.count.to_string(),
            "rule {} count column",
            rule.id
        );
        rows += 1;
    }
    ensure!(
        rows == t.bundle.rules.len(),
        "{rows} csv rows for {} rules",
        t.bundle.rules.len()
    );
    Ok(format!("bundle files byte-identical, {rows} csv rows"))
}

#[test]
fn acceptance() {
    let mut trained = None;
    let results: Vec<(&str, Outcome)> = vec![
        ("rule compression", rule_compression(&mut trained)),
        ("rule generation oracle equivalence", algorithm_oracle()),
        ("classification property suite", classification_properties()),
        ("collation equivalence", collation_equivalence()),
        ("round-trip matching", round_trip(&trained)),
        ("split/combine algebra", split_combine_algebra()),
        ("auto-whitelist", auto_whitelist()),
        ("concept drift", concept_drift()),
        ("persistence", persistence(&trained)),
    ];
    let mut failed = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
