//! `prl`: experiment runner for probabilistically robust classification.
//!
//! Exit codes: 0 when every asserted check passes, 1 for failed checks or
//! runtime failures (a JSON report goes to stderr), 2 for malformed
//! arguments, configurations or inputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use commands::{
    AsymptoticsArgs, EvalArgs, Format, GenerateArgs, Globals, OracleArgs, Outcome, PathoArgs, PropertiesArgs,
    SweepArgs, TrainArgs,
};
use prl_core::PrlError;

#[derive(Parser, Debug)]
#[command(name = "prl", version, about = "Probabilistic perimeters, Ψ-risks and CVaR training on synthetic data")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    #[command(flatten)]
    Task(Task),
    /// Run a task described by a JSON configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Task {
    /// Write a synthetic dataset with its reference classifiers as JSON.
    Generate(GenerateArgs),
    /// Evaluate a risk or perimeter functional on a classifier.
    Eval(EvalArgs),
    /// Minimal energies over grid masks for a list of ramp levels p.
    SweepP(SweepArgs),
    /// Scaled probabilistic perimeter against its local limit.
    Asymptotics(AsymptoticsArgs),
    /// CVaR-SGD training of a soft classifier.
    Train(TrainArgs),
    /// List misclassified points whose perturbations are mostly correct.
    PathoScan(PathoArgs),
    /// Minimise a hard functional over grid masks.
    Oracle(OracleArgs),
    /// Run the randomised invariant suites.
    Properties(PropertiesArgs),
}

/// A `run --config` document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    format: Format,
    #[serde(default)]
    output: Option<PathBuf>,
    task: Task,
}

fn execute(task: &Task, g: &Globals) -> Result<Outcome> {
    match task {
        Task::Generate(a) => commands::run_generate(a, g),
        Task::Eval(a) => commands::run_eval(a, g),
        Task::SweepP(a) => commands::run_sweep(a, g),
        Task::Asymptotics(a) => commands::run_asymptotics(a, g),
        Task::Train(a) => commands::run_train(a, g),
        Task::PathoScan(a) => commands::run_patho(a, g),
        Task::Oracle(a) => commands::run_oracle(a, g),
        Task::Properties(a) => commands::run_properties(a, g),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn is_schema_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<PrlError>() {
            return matches!(
                e,
                PrlError::InvalidInput(_) | PrlError::DimensionMismatch { .. } | PrlError::Json(_) | PrlError::Unsupported(_)
            );
        }
        cause.is::<serde_json::Error>() || cause.is::<std::io::Error>()
    })
}

fn report(status: &str, entries: serde_json::Value) {
    let doc = serde_json::json!({ "status": status, "failures": entries });
    eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
}

fn run(cli: Cli) -> Result<Outcome> {
    let (task, globals, output) = match cli.command {
        CliCommand::Task(task) => (task, Globals { seed: cli.seed, format: cli.format }, cli.output),
        CliCommand::Run { config } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            (cfg.task, Globals { seed: cfg.seed, format: cfg.format }, cfg.output.or(cli.output))
        }
    };
    tracing::debug!(?task, "running");
    let outcome = execute(&task, &globals)?;
    match &output {
        Some(path) => write_atomic(path, &outcome.text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(outcome.text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            report("failed", serde_json::to_value(&outcome.failures).unwrap_or_default());
            ExitCode::from(1)
        }
        Err(err) => {
            let schema = is_schema_error(&err);
            let kind = if schema { "invalid_input" } else { "runtime_error" };
            report("error", serde_json::json!([{ "check": kind, "detail": format!("{err:#}") }]));
            ExitCode::from(if schema { 2 } else { 1 })
        }
    }
}
