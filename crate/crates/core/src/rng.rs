//! The single random-number generator used by every stochastic step.
//!
//! All randomness flows from `ChaCha20Rng` (crate `rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`. Sub-streams (per tree, per study, per fold)
//! get their own seeds from [`derive_seed`], a SplitMix64 mix of the master
//! seed and the sub-stream index, so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identity of the generator, recorded in output metadata.
pub const GENERATOR: &str = "ChaCha20Rng/seed_from_u64 (rand_chacha 0.9); substreams via SplitMix64";

pub type Rng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer applied to `master + (index + 1) * golden-gamma`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
