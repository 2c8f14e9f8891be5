//! Benchmark fixtures shared by the criterion targets in `benches/`.

use hedonic_core::synth::{default_lifull_like, generate, SynthSpec};
use hedonic_core::SpatialDataset;

/// Default synthetic market of `n` listings.
pub fn market(n: usize) -> SpatialDataset {
    generate(&SynthSpec { n, seed: 7, ..default_lifull_like() }).expect("default spec is valid").dataset
}
