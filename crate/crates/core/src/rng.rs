//! Reproducible random streams.
//!
//! A [`RngStream`] names a family of independent ChaCha8 generators. Children
//! are derived by hashing a label into the stream key, and each key exposes
//! 2⁶⁴ independent counter-based substreams, so every Monte Carlo sample and
//! every layer within it gets its own generator regardless of how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Labels separating the purposes random draws are used for.
pub mod domain {
    pub const NETWORK_SAMPLES: u64 = 0x6e65_7477;
    pub const OUTPUT_NOISE: u64 = 0x6f75_7470;
    pub const LIMIT_SAMPLES: u64 = 0x6c69_6d69;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const TV_SAMPLES: u64 = 0x7476_7376;
    pub const TEST_HARNESS: u64 = 0x7465_7374;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix64(seed) }
    }

    /// An independent stream identified by `label`.
    pub fn child(&self, label: u64) -> Self {
        Self { key: splitmix64(self.key ^ splitmix64(label.wrapping_add(0x632b_e59b_d9b4_e019))) }
    }

    /// The generator for substream `index` of this stream.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(index);
        rng
    }

    /// Stable identifier recorded alongside derived samples.
    pub fn id(&self) -> u64 {
        self.key
    }
}
