//! The `rfloop` command-line tool.
//!
//! Settings come from, in decreasing precedence: command-line flags, the
//! TOML file given by `--config` (a table per subcommand, e.g.
//! `[train]`, keys spelled like the long flags), and built-in defaults.
//! `RFLOOP_SEED` supplies the seed when neither flags nor file set one.
//!
//! Every run prints its effective configuration first (a `#` line in text
//! mode, a `config` object with `--json`), which is enough to reproduce it.
//!
//! Exit codes: 0 success, 2 invalid input or arguments, 3 I/O or file
//! format failure, 4 numeric failure (e.g. diverged training).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::FormatError;
pub use commands::*;

pub const SEED_ENV: &str = "RFLOOP_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "rfloop",
    version,
    about = "Train, quantize and cost small CNNs for raw I/Q classification"
)]
pub struct Cli {
    /// TOML file with per-subcommand defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labelled I/Q dataset (RFDS file).
    GenData(GenDataArgs),
    /// Train a float model on an RFDS dataset.
    Train(TrainArgs),
    /// Convert a float model to fixed point.
    Quantize(QuantizeArgs),
    /// Classify frames and print per-class scores.
    Infer(InferArgs),
    /// Accuracy and confusion matrix on a dataset.
    Eval(EvalArgs),
    /// Latency, resource and energy estimate of one design point.
    Estimate(EstimateArgs),
    /// Evaluate a grid of architectures and schedules; report the Pareto set.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Quantize(_) => "quantize",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Estimate(_) => "estimate",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Model(_) | FormatError::FloatWeights => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

pub(crate) fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

/// Output of one command: a text rendering and a JSON value.
#[derive(Debug, Clone)]
pub struct Report {
    pub config: Value,
    pub text: String,
    pub json: Value,
}

/// Overlays non-null, non-empty CLI values onto the file's table for
/// `section` and deserializes the result.
pub fn merge_config<T: Serialize + DeserializeOwned>(
    cli: &T,
    file: Option<&toml::Table>,
    section: &str,
) -> Result<T, CliError> {
    let mut base = match file.and_then(|t| t.get(section)) {
        Some(v) => serde_json::to_value(v).map_err(invalid)?,
        None => Value::Object(Default::default()),
    };
    let Value::Object(over) = serde_json::to_value(cli).map_err(invalid)? else {
        unreachable!("argument structs serialize to objects")
    };
    let Value::Object(obj) = &mut base else {
        return Err(invalid(format!(
            "config section [{section}] must be a table"
        )));
    };
    for (k, v) in over {
        let empty = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
        if !empty {
            obj.insert(k, v);
        }
    }
    serde_json::from_value(base).map_err(|e| invalid(format!("config section [{section}]: {e}")))
}

pub fn load_config_file(path: &std::path::Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Seed from flag, file or `RFLOOP_SEED`, else 0.
pub(crate) fn resolve_seed(seed: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let file = cli.config.as_deref().map(load_config_file).transpose()?;
    let file = file.as_ref();
    match &cli.command {
        Command::GenData(a) => gen_data(&merge_config(a, file, "gen-data")?),
        Command::Train(a) => train(&merge_config(a, file, "train")?, cli.json),
        Command::Quantize(a) => quantize(&merge_config(a, file, "quantize")?),
        Command::Infer(a) => infer(&merge_config(a, file, "infer")?),
        Command::Eval(a) => eval(&merge_config(a, file, "eval")?),
        Command::Estimate(a) => estimate(&merge_config(a, file, "estimate")?),
        Command::Sweep(a) => sweep(&merge_config(a, file, "sweep")?),
    }
}

fn render(cli: &Cli, report: &Report) -> String {
    if cli.json {
        let v = serde_json::json!({
            "command": cli.command.name(),
            "config": report.config,
            "result": report.json,
        });
        serde_json::to_string_pretty(&v).unwrap() + "\n"
    } else {
        format!(
            "# rfloop {} {}\n{}",
            cli.command.name(),
            report.config,
            report.text
        )
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{}", render(&cli, &report));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rfloop {}: error: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
