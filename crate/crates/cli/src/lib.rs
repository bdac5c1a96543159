//! Pipeline runner behind the `databias` binary.
//!
//! Each subcommand reads one TOML config (plus `--set key=value`
//! overrides), runs its stage for every configured city and writes
//! artifacts under `output_dir/{city}/{stage}/` next to a
//! `run_metadata.json`. Everything except the metadata is byte-identical
//! across reruns with the same config and inputs.

pub mod config;
pub mod report;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load, AuditConfig, LoadedConfig};

/// Failures mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    /// An upstream stage has not produced the artifact this stage reads.
    #[error("dependency error: {0}")]
    Dependency(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Dependency(_) => 4,
        }
    }
}

impl From<databias::Error> for CliError {
    fn from(err: databias::Error) -> Self {
        match err {
            databias::Error::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "databias", version, about = "Audit data production bias in GPS mobility datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Audit configuration file.
    #[arg(long, short, global = true, default_value = "audit.toml")]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set thresholds.stay_radius_m=150`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Also write SVG plots (Lorenz curve, SHAP beeswarm).
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Parse pings, infer homes, load ACS tables and apply the filters.
    Ingest,
    /// Ingest plus data-production inequality (Gini, Lorenz, top share).
    Audit,
    /// Production-group mobility networks and their correlations.
    Networks,
    /// Nested cross-validated forests per city and across cities.
    Model,
    /// Tree Shapley attributions of each city model.
    Shap,
    /// Write a synthetic fixture to the configured input paths.
    Synth,
    /// Compose the per-city report from the other stages' artifacts.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Audit => "audit",
            Command::Networks => "networks",
            Command::Model => "model",
            Command::Shap => "shap",
            Command::Synth => "synth",
            Command::Report => "report",
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let loaded = config::load(&cli.config, &cli.overrides)?;
    let ctx = stages::Ctx {
        loaded,
        command: cli.command.name(),
        plots: cli.plots,
        overrides: cli.overrides.clone(),
    };
    match cli.command {
        Command::Ingest => stages::ingest(&ctx).map(drop),
        Command::Audit => stages::audit(&ctx),
        Command::Networks => stages::networks(&ctx),
        Command::Model => stages::model(&ctx),
        Command::Shap => stages::shap(&ctx),
        Command::Synth => stages::synth(&ctx),
        Command::Report => report::report(&ctx),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("databias {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
