use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use chrono::Utc;
use rulemine_core::audit::{AuditEntry, JsonLines};
use rulemine_core::collation::NotificationMode;
use rulemine_core::dataset::Dataset;
use rulemine_core::detector::load_outlier_index;
use rulemine_core::domain::{Response, Rule, RuleStatus};
use rulemine_core::pipeline::{write_rules, ActionLogSink, Bundle, Flag, PipelineConfig, Runtime};
use rulemine_core::rules::{export_csv, AppraisalAction};
use rulemine_core::synthetic::{generate as generate_scenario, write_ground_truth, ScenarioSpec};
use rulemine_service::AppState;

use crate::failure::{require, Failure};
use crate::{ExportFormat, ListFormat, Mode};

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "ground_truth.csv";
const AUDIT_FILE: &str = "audit.jsonl";

pub fn generate(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    require(spec_path, "scenario spec")?;
    let spec = ScenarioSpec::load(spec_path)?;
    spec.validate()?;
    let (dataset, truth) = generate_scenario(&spec)?;
    std::fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join(DATASET_FILE))?);
    dataset.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join(TRUTH_FILE))?);
    write_ground_truth(&truth, &mut w)?;
    w.flush()?;
    println!(
        "generated {} records over {} cells with {} injected occurrences in {}",
        dataset.len(),
        spec.n_cells,
        truth.len(),
        out.display()
    );
    Ok(())
}

pub fn train(config_path: &Path, data: &Path, outliers: Option<&Path>, out: &Path) -> Result<(), Failure> {
    require(config_path, "config")?;
    require(data, "dataset")?;
    let config = PipelineConfig::load(config_path)?;
    let dataset = Dataset::load(data, Some(&config.field_names()))
        .map_err(|e| Failure::from(e).context(format!("reading {}", data.display())))?;
    let external = match outliers {
        Some(p) => {
            require(p, "outlier index")?;
            Some(load_outlier_index(p)?)
        }
        None => None,
    };
    let bundle = rulemine_core::pipeline::train(&dataset, &config, external, Utc::now())?;
    bundle.write(out)?;
    let (outlier_records, occurrences, source) = bundle
        .diagnostics
        .as_ref()
        .map(|d| (d.outlier_records, d.collated_occurrences, d.detector_source.clone()))
        .unwrap_or_default();
    println!(
        "{} rules from {occurrences} occurrences ({outlier_records} outlier records, detector {source}) written to {}",
        bundle.rules.len(),
        out.display()
    );
    Ok(())
}

fn load_bundle(dir: &Path) -> Result<Bundle, Failure> {
    if !dir.is_dir() {
        return Err(Failure::not_found(anyhow!(
            "bundle directory {} not found",
            dir.display()
        )));
    }
    Ok(Bundle::load(dir)?)
}

fn severity(rule: &Rule) -> String {
    rule.response
        .severity
        .map(|s| s.to_string())
        .unwrap_or_else(|| "-".into())
}

pub fn rules_list(dir: &Path, status: Option<&str>, format: ListFormat) -> Result<(), Failure> {
    let bundle = load_bundle(dir)?;
    let status: Option<RuleStatus> = status
        .map(|s| s.parse())
        .transpose()
        .map_err(|e: String| Failure::invalid(anyhow!(e)))?;
    let rules = bundle.rules.listing(status);
    let mut out = std::io::stdout().lock();
    if format == ListFormat::Json {
        serde_json::to_writer_pretty(&mut out, &rules).map_err(Failure::runtime)?;
        writeln!(out)?;
        return Ok(());
    }
    let width = rules.iter().map(|r| r.canonical_key().len()).max().unwrap_or(0).max(7);
    writeln!(
        out,
        "{:<8} {:<width$} {:>7}  {:<12} severity",
        "id", "pattern", "count", "status"
    )?;
    for r in rules {
        writeln!(
            out,
            "{:<8} {:<width$} {:>7}  {:<12} {}",
            r.id,
            r.canonical_key(),
            r.count,
            r.status.as_str(),
            severity(r)
        )?;
    }
    Ok(())
}

pub fn rules_show(dir: &Path, id: &str) -> Result<(), Failure> {
    let bundle = load_bundle(dir)?;
    let rule = bundle
        .rules
        .get(id)
        .ok_or_else(|| Failure::not_found(anyhow!("rule not found: {id}")))?;
    let names: Vec<&str> = bundle.fields.iter().map(|f| f.name.as_str()).collect();
    println!("{}", serde_json::to_string_pretty(rule).map_err(Failure::runtime)?);
    for (name, c) in names.iter().zip(&rule.conditions) {
        println!("  {name:<20} {}", c.glyph());
    }
    Ok(())
}

pub fn rules_export(dir: &Path, format: ExportFormat, out: Option<&Path>) -> Result<(), Failure> {
    let bundle = load_bundle(dir)?;
    let mut buf = Vec::new();
    match format {
        ExportFormat::Csv => export_csv(&bundle.rules, &bundle.fields, &mut buf).map_err(Failure::runtime)?,
        ExportFormat::Json => {
            buf.extend_from_slice(bundle.rules_json().as_bytes());
            buf.push(b'\n');
        }
    }
    match out {
        Some(p) => std::fs::write(p, buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

pub fn rules_appraise(dir: &Path, id: &str, action: &str, actor: &str) -> Result<(), Failure> {
    let mut bundle = load_bundle(dir)?;
    let action: AppraisalAction =
        serde_json::from_str(action).map_err(|e| Failure::invalid(anyhow!("appraisal action: {e}")))?;
    let now = Utc::now();
    let outcome = bundle.rules.apply_appraisal(id, &action, &bundle.occurrences, now)?;
    bundle.save_rules(dir)?;
    JsonLines::new(dir.join(AUDIT_FILE)).append(&AuditEntry::from_outcome(&outcome, actor, now))?;
    println!(
        "{} {}: {} -> {}",
        outcome.action,
        outcome.rule_id,
        outcome.before_keys.join(" "),
        outcome.after_keys.join(" ")
    );
    Ok(())
}

pub fn rules_auto_whitelist(dir: &Path, critical_frequency: u64) -> Result<(), Failure> {
    let mut bundle = load_bundle(dir)?;
    let outcome = bundle
        .rules
        .auto_whitelist(critical_frequency, &Response::default_alarm())?;
    bundle.save_rules(dir)?;
    println!(
        "whitelisted {}, default alarm {}, merged {}",
        outcome.whitelisted.len(),
        outcome.default_alarmed.len(),
        outcome.merged.len()
    );
    Ok(())
}

pub fn serve(config_path: &Path, dir: &Path, host: &str, port: u16, data: Option<&Path>) -> Result<(), Failure> {
    require(config_path, "config")?;
    if !dir.is_dir() {
        return Err(Failure::not_found(anyhow!(
            "startup: bundle directory {} not found",
            dir.display()
        )));
    }
    let config = PipelineConfig::load(config_path)?;
    let dataset = match data {
        Some(p) => {
            require(p, "dataset")?;
            Some(Dataset::load(p, Some(&config.field_names()))?)
        }
        None => None,
    };
    let state = AppState::open(config, dir, dataset)?.into_shared();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::runtime(anyhow!("startup: cannot listen on {host}:{port}: {e}")))?;
        println!("listening on {}", listener.local_addr()?);
        rulemine_service::serve(state, listener).await?;
        Ok(())
    })
}

pub struct ReplayArgs {
    pub bundle: PathBuf,
    pub data: PathBuf,
    pub mode: Mode,
    pub speed: f64,
    pub outliers: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub actions: Option<PathBuf>,
    pub save_rules: bool,
}

fn fresh_log(path: PathBuf) -> Result<PathBuf, Failure> {
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    Ok(path)
}

pub fn replay(args: ReplayArgs) -> Result<(), Failure> {
    if !(args.speed >= 0.0 && args.speed.is_finite()) {
        return Err(Failure::invalid(anyhow!("speed must be a finite number >= 0")));
    }
    let bundle = load_bundle(&args.bundle)?;
    let mut config = match &args.config {
        Some(p) => {
            require(p, "config")?;
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::new(bundle.fields.clone()),
    };
    config.collation.mode = match args.mode {
        Mode::Delayed => NotificationMode::Delayed,
        Mode::Eager => NotificationMode::Eager,
    };
    require(&args.data, "dataset")?;
    let dataset = Dataset::load(&args.data, Some(&config.field_names()))?;
    let flags = match &args.outliers {
        Some(p) => {
            require(p, "outlier index")?;
            Some(load_outlier_index(p)?)
        }
        None => None,
    };
    let events_path = fresh_log(args.events.unwrap_or_else(|| args.bundle.join("replay-events.jsonl")))?;
    let actions_path = fresh_log(args.actions.unwrap_or_else(|| args.bundle.join("replay-actions.jsonl")))?;
    let log = JsonLines::new(&events_path);
    let mut runtime = Runtime::from_bundle(config, &bundle, Box::new(ActionLogSink::new(actions_path)))?;

    let mut last = None;
    for record in dataset.chronological() {
        if let Some(prev) = last {
            if args.speed > 0.0 && record.timestamp > prev {
                let gap = (record.timestamp - prev).to_std().unwrap_or_default();
                std::thread::sleep(gap.div_f64(args.speed));
            }
        }
        let flag = match &flags {
            Some(idx) if idx.contains(&record.cell_id, record.timestamp) => Flag::Outlier,
            Some(_) => Flag::Normal,
            None => Flag::Detect,
        };
        for e in runtime.apply_step(record, record.timestamp, flag)? {
            log.append(&e)?;
        }
        last = Some(record.timestamp);
    }
    if let Some(now) = last {
        for e in runtime.finish(now)? {
            log.append(&e)?;
        }
    }
    if args.save_rules {
        write_rules(&args.bundle, runtime.rules(), &bundle.fields)?;
    }
    let s = runtime.stats();
    println!(
        "events {} matched {} whitelisted {} discovered {} actions {} unappraised {}",
        s.events,
        s.matched,
        s.whitelisted,
        s.discovered,
        s.actions_executed,
        runtime.rules().unappraised().count()
    );
    Ok(())
}
