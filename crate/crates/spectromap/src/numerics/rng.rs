//! Deterministic seeding and stream derivation.
//!
//! All randomness in the crate flows from an explicit [`Seed`]. Derived streams
//! (per stage, per tomography mode, per grid cell, ...) are obtained by mixing
//! the parent seed with labels or indices, so that work items can be evaluated
//! in any order — or in parallel — with bit-identical results.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

/// A 64-bit seed for a deterministic random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

/// SplitMix64 finalizer; good avalanche behavior for cheap stream derivation.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    /// Fresh ChaCha stream for this seed.
    pub fn rng(self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.0)
    }

    /// Child seed derived from a label (stage names, artifact kinds, ...).
    pub fn derive(self, label: &str) -> Seed {
        // FNV-1a over the label bytes, then mixed with the parent seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Seed(splitmix(self.0 ^ h))
    }

    /// Child seed derived from a sequence of indices (mode, grid cell, trial).
    pub fn derive_indices(self, parts: &[u64]) -> Seed {
        let mut h = self.0;
        for &p in parts {
            h = splitmix(h ^ p);
        }
        Seed(splitmix(h))
    }
}
