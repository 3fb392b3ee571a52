//! Deterministic stream derivation.
//!
//! Every random stream is keyed by `(seed, label, index)`: a run seed is split
//! into independent `env`, `agent` and `trainer` streams by label, and
//! per-round draws add the round (and arm) as the index. Keys are mixed with
//! SplitMix64 and feed a ChaCha8 generator, so streams are stable across
//! platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Derives a child seed from a parent seed, a label and an index.
pub fn derive(seed: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(seed ^ label_hash(label));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_for(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, index))
}

/// Sub-seeds of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub env: u64,
    pub agent: u64,
    pub trainer: u64,
}

impl RunSeeds {
    pub fn new(run_seed: u64) -> Self {
        Self {
            env: derive(run_seed, "env", 0),
            agent: derive(run_seed, "agent", 0),
            trainer: derive(run_seed, "trainer", 0),
        }
    }
}
