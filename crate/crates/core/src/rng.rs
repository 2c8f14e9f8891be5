//! Seeded random streams.
//!
//! Every stochastic routine in the crate draws from [`ChaCha8Rng`], a
//! counter-based generator whose output is fixed across platforms, so seeded
//! fixtures stay portable.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Generator for a root seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a root seed and a stream label.
///
/// SplitMix64 finalizer over the pair; distinct labels give uncorrelated
/// child streams.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
