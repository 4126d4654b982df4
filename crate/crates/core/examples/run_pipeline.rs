//! Runs the whole command-line workflow in process for every arm: simulate,
//! train, score and evaluate, then prints the comparison table. Takes a run
//! config (default `configs/smoke.toml`).
//!
//! cargo run --release --example run_pipeline -- [config.toml]

use std::path::PathBuf;

use automac::cli::{cmd_evaluate, cmd_score, cmd_simulate, cmd_train, Arm, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml"));
    let config = RunConfig::load(&path)?;
    config.validate()?;
    cmd_simulate(&config)?;
    for arm in Arm::ALL {
        cmd_train(&config, arm)?;
        cmd_score(&config, arm, &[], None)?;
        cmd_evaluate(&config, arm, None)?;
    }
    let table = config.output.root.join("comparison.md");
    print!("{}", std::fs::read_to_string(&table)?);
    Ok(())
}
