//! `egg`: experiments with Grassmann graph embeddings.

mod commands;
mod config;
mod error;
mod fanout;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::Run;
use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;
use crate::fanout::{parse_units, Fanout, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Graph classification, mean ± std test accuracy over repetitions.
    Classify,
    /// VGAE node clustering with plain and EGG k-means.
    Cluster,
    /// Finite-difference checks of the SVD rule and the model.
    Gradcheck,
    /// Classification accuracy across EGG energy thresholds.
    Sensitivity,
    /// Export graph or node embeddings as CSV.
    Embed,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Cluster => "cluster",
            Command::Gradcheck => "gradcheck",
            Command::Sensitivity => "sensitivity",
            Command::Embed => "embed",
        }
    }

    /// The task a command implies; `embed` follows the configuration.
    fn task(self) -> Option<Task> {
        match self {
            Command::Classify | Command::Sensitivity => Some(Task::Classify),
            Command::Cluster => Some(Task::Cluster),
            Command::Gradcheck | Command::Embed => None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "egg", version, about = "Grassmann graph embedding experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker processes for repetitions.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Parent directory for the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration overrides as dotted `key=value` pairs.
    overrides: Vec<String>,
    #[arg(long, hide = true)]
    worker_units: Option<String>,
    #[arg(long, hide = true, requires = "worker_units")]
    worker_dir: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let (role, run_dir) = match (&cli.worker_units, &cli.worker_dir) {
        (Some(units), Some(dir)) => (Role::Worker { units: parse_units(units)? }, dir.clone()),
        (Some(_), None) => return Err(CliError::config("--worker-units needs --worker-dir")),
        _ => {
            if cli.jobs == 0 {
                return Err(CliError::config("--jobs must be at least 1"));
            }
            let seed = cli.seed.unwrap_or(cfg.seed);
            cfg = cfg.with_seed(seed);
            if let Some(out) = cli.out {
                cfg.output = out;
            }
            if let Some(task) = cli.command.task() {
                cfg.task = task;
            }
            cfg.validate()?;
            if cli.command != Command::Gradcheck {
                cfg.dataset_dir()?;
            }
            let dir = output::create_run_dir(&cfg.output, cli.command.name())?;
            output::write_json(&dir.join("config.json"), &cfg)?;
            (Role::Parent { jobs: cli.jobs }, dir)
        }
    };
    let run = Run {
        config: &cfg,
        fanout: Fanout {
            command: cli.command.name(),
            run_dir: &run_dir,
            role: &role,
        },
    };
    match cli.command {
        Command::Classify => commands::classify(&run),
        Command::Cluster => commands::cluster(&run),
        Command::Gradcheck => commands::gradcheck(&run),
        Command::Sensitivity => commands::sensitivity(&run),
        Command::Embed => commands::embed(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("egg: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
