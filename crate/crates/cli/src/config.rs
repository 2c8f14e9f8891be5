//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! ```toml
//! seed = 7
//! workers = 1
//!
//! [data]
//! path = "rents.csv"       # or: synth = "synth.toml"
//! schema = "rents.schema.toml"
//!
//! [model]
//! kind = "nngp"
//! k = 30
//!
//! [benchmark]
//! sizes = [1000, 10000]
//! models = ["ols", "nngp", "dnn"]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub variogram: VariogramConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file; needs `schema`.
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Synthetic spec (TOML). With neither `path` nor `synth` the built-in
    /// default spec is used.
    pub synth: Option<PathBuf>,
    /// Overrides the synthetic sample size.
    pub n: Option<usize>,
    pub drop_missing: Option<bool>,
    pub jitter_duplicates: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: Option<String>,
    pub family: Option<String>,
    pub phi: Option<f64>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    pub trials: Option<usize>,
    pub folds: Option<usize>,
    pub optimizer: Option<String>,
    pub split: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramConfig {
    pub bins: Option<usize>,
    pub max_dist: Option<f64>,
    pub max_pairs: Option<usize>,
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub sizes: Option<Vec<usize>>,
    pub models: Option<Vec<String>>,
    pub large: Option<bool>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.path, &mut cfg.data.schema, &mut cfg.data.synth, &mut cfg.benchmark.out] {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Checks the data source is unambiguous and every referenced file exists.
    pub fn validate(&self) -> CliResult<()> {
        let d = &self.data;
        if d.path.is_some() && d.synth.is_some() {
            return Err(CliError::config("give either a data file or a synthetic spec, not both"));
        }
        if d.path.is_some() && d.schema.is_none() {
            return Err(CliError::config("a data file needs --schema"));
        }
        for p in [&d.path, &d.schema, &d.synth].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::config(format!("no such file: {}", p.display())));
            }
        }
        if let Some(s) = self.model.split {
            if !(s > 0.0 && s < 1.0) {
                return Err(CliError::config(format!("split fraction must lie in (0, 1), got {s}")));
            }
        }
        if self.workers == Some(0) {
            return Err(CliError::config("--workers must be at least 1"));
        }
        Ok(())
    }
}

/// Replaces `slot` when the flag was given.
pub(crate) fn overlay<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

/// Sets `slot` to `Some(true)` when a boolean switch was passed.
pub(crate) fn overlay_switch(slot: &mut Option<bool>, flag: bool) {
    if flag {
        *slot = Some(true);
    }
}
