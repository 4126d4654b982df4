//! The `automac` command line: simulate a dataset, train an arm, score
//! slices and evaluate the scores, all driven by one TOML run config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 contract
//! violation (for example an encoder fingerprint mismatch).

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_evaluate, cmd_score, cmd_simulate, cmd_train, format_scores, load_arm, load_split_data, parse_scores, Arm,
    ArmModel, Layout, ScoreLine, SplitData, SCORE_HEADER,
};
pub use config::RunConfig;

use crate::{Error, Result};

/// Overrides `output.root` when set and `--out` is not given.
pub const OUT_DIR_ENV: &str = "AUTOMAC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "automac", version, about = "Motion grading and grade affinity scoring for 2-D MR slices")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a graded synthetic dataset with its split.
    Simulate,
    /// Train one arm and write its checkpoints, templates and log.
    Train {
        #[arg(long, value_enum)]
        arm: Arm,
    },
    /// Predict grades and affinity scores.
    Score {
        #[arg(long, value_enum)]
        arm: Arm,
        /// Manifests (.csv), slice directories or slice files; the test
        /// split when omitted.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Score file to write instead of `<out>/<arm>/scores.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare a score file against the ground-truth grades.
    Evaluate {
        #[arg(long, value_enum)]
        arm: Arm,
        /// Score file to read instead of `<out>/<arm>/scores.csv`.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

/// Loads the config and applies flag and environment overrides. Flags win
/// over the environment, which wins over the file.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml("", &std::env::current_dir().map_err(|e| Error::io(".", e))?)?,
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = common.out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
        config.output.root = out;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&config).map(drop),
        Command::Train { arm } => cmd_train(&config, *arm),
        Command::Score { arm, inputs, output } => cmd_score(&config, *arm, inputs, output.as_deref()).map(drop),
        Command::Evaluate { arm, predictions } => {
            let report = cmd_evaluate(&config, *arm, predictions.as_deref())?;
            println!("{}: {}", report.arm, report.table_row());
            Ok(())
        }
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
