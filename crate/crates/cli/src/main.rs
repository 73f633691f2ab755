use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser)]
#[command(
    name = "rulemine",
    version,
    about = "Mine, appraise and apply anomaly rules over KPI time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with injected anomaly patterns.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect, collate and generate rules; writes a bundle directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// External outlier index (`cell_id,timestamp`) used instead of the builtin detector.
        #[arg(long)]
        outliers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect, export and appraise the rules of a bundle.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Run the HTTP service over a bundle.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Dataset preloaded as plotting history.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Stream a dataset through the application phase and log the events.
    Replay {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Delayed)]
        mode: Mode,
        /// Simulated seconds per wall-clock second; 0 replays without pauses.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[arg(long)]
        outliers: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Event log path, default `<bundle>/replay-events.jsonl`.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Action log path, default `<bundle>/replay-actions.jsonl`.
        #[arg(long)]
        actions: Option<PathBuf>,
        /// Write discovered rules back into the bundle.
        #[arg(long)]
        save_rules: bool,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Rules by descending count.
    List {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        status: Option<String>,
        #[arg(long, value_enum, default_value_t = ListFormat::Table)]
        format: ListFormat,
    },
    Show {
        #[arg(long)]
        bundle: PathBuf,
        id: String,
    },
    Export {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one appraisal action given as JSON, e.g. `{"action":"whitelist"}`.
    Appraise {
        #[arg(long)]
        bundle: PathBuf,
        id: String,
        #[arg(long)]
        action: String,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
    /// Whitelist every unappraised rule with count above the threshold and
    /// give the rest the default alarm.
    AutoWhitelist {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        critical_frequency: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Delayed,
    Eager,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ListFormat {
    Table,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { spec, out } => commands::generate(&spec, &out),
        Command::Train {
            config,
            data,
            outliers,
            out,
        } => commands::train(&config, &data, outliers.as_deref(), &out),
        Command::Rules { command } => match command {
            RulesCommand::List { bundle, status, format } => commands::rules_list(&bundle, status.as_deref(), format),
            RulesCommand::Show { bundle, id } => commands::rules_show(&bundle, &id),
            RulesCommand::Export { bundle, format, out } => commands::rules_export(&bundle, format, out.as_deref()),
            RulesCommand::Appraise {
                bundle,
                id,
                action,
                actor,
            } => commands::rules_appraise(&bundle, &id, &action, &actor),
            RulesCommand::AutoWhitelist {
                bundle,
                critical_frequency,
            } => commands::rules_auto_whitelist(&bundle, critical_frequency),
        },
        Command::Serve {
            config,
            bundle,
            port,
            host,
            data,
        } => commands::serve(&config, &bundle, &host, port, data.as_deref()),
        Command::Replay {
            bundle,
            data,
            mode,
            speed,
            outliers,
            config,
            events,
            actions,
            save_rules,
        } => commands::replay(commands::ReplayArgs {
            bundle,
            data,
            mode,
            speed,
            outliers,
            config,
            events,
            actions,
            save_rules,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn,rulemine_service=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
