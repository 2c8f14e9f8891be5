use hedonic_core::dataset::{load_csv, LoadOptions, MissingPolicy, Schema, SpatialDataset};
use hedonic_core::nngp::jitter_duplicates;
use hedonic_core::synth::{default_lifull_like, SynthSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Seed streams derived from the root seed.
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_VARIOGRAM: u64 = 2;
pub const STREAM_TUNER: u64 = 3;
pub const STREAM_SUBSAMPLE: u64 = 4;
pub const STREAM_CV: u64 = 5;

pub struct Loaded {
    pub ds: SpatialDataset,
    pub schema: Schema,
}

/// The configured synthetic spec, or the built-in default, with the size
/// and root-seed overrides applied.
pub fn synth_spec(cfg: &RunConfig) -> CliResult<SynthSpec> {
    let mut spec = match &cfg.data.synth {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            SynthSpec::from_toml_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => default_lifull_like(),
    };
    if let Some(n) = cfg.data.n {
        spec.n = n;
    }
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load(cfg: &RunConfig) -> CliResult<Loaded> {
    let mut loaded = match (&cfg.data.path, &cfg.data.schema) {
        (Some(path), Some(schema_path)) => {
            let schema = Schema::from_path(schema_path)?;
            let missing = if cfg.data.drop_missing.unwrap_or(false) { MissingPolicy::Drop } else { MissingPolicy::Reject };
            let ds = load_csv(path, &schema, LoadOptions { missing })?;
            Loaded { ds, schema }
        }
        (Some(_), None) => return Err(CliError::config("a data file needs --schema")),
        _ => {
            let spec = synth_spec(cfg)?;
            let data = hedonic_core::synth::generate(&spec)?;
            Loaded { ds: data.dataset, schema: spec.schema() }
        }
    };
    if cfg.data.jitter_duplicates.unwrap_or(false) {
        let (coords, moved) = jitter_duplicates(&loaded.ds.coords);
        if moved > 0 {
            eprintln!("jittered {moved} duplicate site(s)");
        }
        loaded.ds.coords = coords;
    }
    Ok(loaded)
}
