//! Library behind the `hedonic` binary, exposed so commands can be driven
//! from tests.

pub mod args;
pub mod benchmark;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod models;

use args::{Cli, Command};
use config::RunConfig;
pub use error::{CliError, CliResult};

/// Runs one parsed invocation and returns the text for stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    config::overlay(&mut cfg.seed, &cli.seed);
    config::overlay(&mut cfg.workers, &cli.workers);
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a, cfg),
        Command::Variogram(a) => commands::variogram(a, cfg),
        Command::Fit(a) => commands::fit(a, cfg),
        Command::Predict(a) => commands::predict(a),
        Command::Benchmark(a) => benchmark::benchmark(a, cfg),
        Command::NeighborCurve(a) => commands::neighbor_curve_cmd(a, cfg),
    }
}
