//! Named random streams derived from a single experiment seed.
//!
//! Every consumer (weight init, shuffling, memory selection, task generation,
//! replay sampling) draws from its own stream, so adding draws in one place
//! never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Stream names used throughout the crate.
pub mod stream {
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const SELECTION: &str = "selection";
    pub const TASKS: &str = "tasks";
    pub const REPLAY: &str = "replay";
    pub const SPLIT: &str = "split";
    pub const PROBE: &str = "probe";
    pub const FISHER: &str = "fisher";
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a 64-bit seed from a parent seed and a path of labels.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for label in labels {
        state ^= fnv1a(label.as_bytes());
        out = splitmix64(&mut state);
    }
    out
}

/// Master seed from which named streams are split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> Rng {
        Rng::seed_from_u64(derive_seed(self.seed, &[name]))
    }

    /// Stream keyed by name and an index, e.g. one stream per task.
    pub fn indexed(&self, name: &str, index: usize) -> Rng {
        Rng::seed_from_u64(derive_seed(self.seed, &[name, &index.to_string()]))
    }

    pub fn child_seed(&self, name: &str, index: usize) -> u64 {
        derive_seed(self.seed, &[name, &index.to_string()])
    }
}
