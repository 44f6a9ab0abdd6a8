//! Counter-based random streams.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(master_seed,
//! path_index)`, so an ensemble is a pure function of its seed and size no
//! matter how the paths are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream derivation rule shared by every sampler in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngContract {
    master_seed: u64,
}

impl RngContract {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// The stream for one path. Distinct indices give non-overlapping
    /// ChaCha streams under the same key.
    pub fn stream(&self, path_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path_index);
        rng
    }

    /// An independent contract for a different purpose (marks, noise, inner
    /// Monte Carlo, ...), derived by mixing `tag` into the key.
    pub fn derive(&self, tag: u64) -> RngContract {
        RngContract::new(splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(0x5851_F42D))))
    }
}

/// SplitMix64 finalizer; used to turn structured keys into well-mixed seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a tuple of floats by bit pattern; stable across platforms.
pub(crate) fn hash_f64s(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, v| splitmix64(acc ^ v.to_bits()))
}
