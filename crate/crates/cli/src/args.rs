use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{overlay, overlay_switch, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hedonic", version, about = "Spatial hedonic regression: OLS, NNGP Kriging and neural networks")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (1 = sequential).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its schema.
    Synth(SynthArgs),
    /// Fit covariance families to the empirical variogram of OLS residuals.
    Variogram(VariogramArgs),
    /// Fit a model and save it.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Compare models across sample sizes on held-out data.
    Benchmark(BenchmarkArgs),
    /// Cross-validated NNGP error as a function of the neighbour count.
    NeighborCurve(CurveArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Input CSV (needs --schema).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column schema (TOML) for --data.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Synthetic data spec (TOML) instead of a CSV file.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    /// Synthetic sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    pub drop_missing: bool,
    /// Nudge exactly repeated sites apart by 1e-6 km.
    #[arg(long)]
    pub jitter_duplicates: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VariogramFlags {
    /// Number of lag bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Largest lag in km (default: a third of the bounding-box diagonal).
    #[arg(long)]
    pub max_dist: Option<f64>,
    /// Pair budget before subsampling.
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Cross-validation folds over bins for family selection.
    #[arg(long)]
    pub variogram_folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Covariance family (exponential, gaussian, spherical); selected from
    /// the variogram when omitted.
    #[arg(long)]
    pub family: Option<String>,
    /// Inverse range (1/km).
    #[arg(long)]
    pub phi: Option<f64>,
    /// Nugget-to-partial-sill ratio.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Nearest neighbours.
    #[arg(long)]
    pub k: Option<usize>,
    /// Tuner trial budget for the network.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Cross-validation folds inside the tuner.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Network optimizer (adam, rmsprop).
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Schema output (default: next to the CSV, `.schema.toml`).
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub variogram: VariogramFlags,
    /// Force this covariance family.
    #[arg(long)]
    pub family: Option<String>,
    /// Write the (h, gamma, N) table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub variogram: VariogramFlags,
    /// ols, nngp, gp-exact or dnn.
    #[arg(long = "model")]
    pub kind: Option<String>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file from `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to predict (response column optional).
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Interval coverage.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub drop_missing: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub variogram: VariogramFlags,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Models, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Training fraction of each split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Allow sizes up to 10^6 (OLS and NNGP only above 10^5).
    #[arg(long)]
    pub large: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub variogram: VariogramFlags,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Neighbour counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,45")]
    pub k_list: Vec<usize>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        // A data source on the command line replaces the configured one.
        if self.data.is_some() || self.synth.is_some() {
            d.path = self.data.clone();
            d.synth = self.synth.clone();
        }
        overlay(&mut d.schema, &self.schema);
        overlay(&mut d.n, &self.n);
        overlay_switch(&mut d.drop_missing, self.drop_missing);
        overlay_switch(&mut d.jitter_duplicates, self.jitter_duplicates);
    }
}

impl VariogramFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let v = &mut cfg.variogram;
        overlay(&mut v.bins, &self.bins);
        overlay(&mut v.max_dist, &self.max_dist);
        overlay(&mut v.max_pairs, &self.max_pairs);
        overlay(&mut v.folds, &self.variogram_folds);
    }
}

impl ModelFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        overlay(&mut m.family, &self.family);
        overlay(&mut m.phi, &self.phi);
        overlay(&mut m.alpha, &self.alpha);
        overlay(&mut m.k, &self.k);
        overlay(&mut m.trials, &self.trials);
        overlay(&mut m.folds, &self.folds);
        overlay(&mut m.optimizer, &self.optimizer);
    }
}
