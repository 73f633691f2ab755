#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use rand::Rng;
use rulemine_core::domain::{Aggregation, Condition, FieldSpec, Rule, Scale, Timestamp};
use rulemine_core::pipeline::{DetectorConfig, PipelineConfig};
use rulemine_core::rules::Probe;
use rulemine_core::synthetic::{Direction, InjectedPattern, KpiBaseline, Magnitude, ScenarioSpec};
use rulemine_core::CollatedOutlier;

pub fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

pub fn minutes(m: i64) -> chrono::Duration {
    chrono::Duration::minutes(m)
}

/// The five pattern classes of the compression scenario, as direction lists.
pub fn pattern_directions() -> Vec<Vec<Direction>> {
    use Direction::*;
    vec![
        vec![Up, Down, Down, Flat, Flat],
        vec![Up, Up, Up, Flat, Flat],
        vec![Flat, Flat, Flat, Up, Flat],
        vec![Flat, Down, Flat, Flat, Up],
        vec![Down, Flat, Up, Down, Flat],
    ]
}

pub fn expected_signature(dirs: &[Direction]) -> String {
    dirs.iter()
        .map(|d| match d {
            Direction::Up => "+",
            Direction::Down => "-",
            Direction::Flat => "0",
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// 50 cells, 5 KPIs, 30 days at 15 minutes, 5 patterns of 80 occurrences each.
pub fn scenario(noise_std: f64, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        n_cells: 50,
        n_regions: 5,
        kpis: (0..5)
            .map(|k| KpiBaseline::new(format!("kpi{k}"), 100.0, noise_std))
            .collect(),
        interval: std::time::Duration::from_secs(900),
        days: 30,
        start: t0(),
        patterns: pattern_directions()
            .into_iter()
            .enumerate()
            .map(|(i, directions)| InjectedPattern {
                pattern_id: format!("p{i}"),
                directions,
                magnitude: Magnitude::Absolute(100.0),
                duration: 1 + (i as u32 % 4),
                occurrences: 80,
            })
            .collect(),
        seed,
        separation: 1,
    }
}

pub fn scenario_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::new(
        (0..5)
            .map(|k| FieldSpec::linear(format!("kpi{k}"), Aggregation::Mean, 50.0))
            .collect(),
    );
    cfg.detector = DetectorConfig::Builtin { z: 4.0 };
    cfg
}

/// Independent restatement of the significance tests.
pub fn oracle_classify(x: f64, r: f64, field: &FieldSpec, eps: f64) -> Condition {
    match field.scale {
        Scale::Linear => {
            if x - r > field.theta {
                Condition::Gt
            } else if r - x > field.theta {
                Condition::Lt
            } else {
                Condition::Approx
            }
        }
        Scale::Exponential => {
            let (x, r) = (x.max(eps), r.max(eps));
            if x / r > field.theta {
                Condition::Gt
            } else if r / x > field.theta {
                Condition::Lt
            } else {
                Condition::Approx
            }
        }
    }
}

/// Brute-force matcher: every specified position equal, every extended
/// condition true.
pub fn oracle_matches(rule: &Rule, vector: &[Condition], duration: u32, aggregated: &[Option<f64>]) -> bool {
    rule.conditions.len() == vector.len()
        && rule
            .conditions
            .iter()
            .zip(vector)
            .all(|(r, v)| *r == Condition::DontCare || r == v)
        && rule.extended.iter().all(|e| e.holds(duration, aggregated))
}

pub fn probe<'a>(vector: &'a [Condition], o: &'a CollatedOutlier) -> Probe<'a> {
    Probe {
        conditions: vector,
        duration: o.duration,
        aggregated: &o.aggregated,
    }
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<Condition> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Condition::Lt,
            1 => Condition::Approx,
            _ => Condition::Gt,
        })
        .collect()
}
