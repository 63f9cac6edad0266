//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed and a 64-bit
//! stream id, so child streams can be derived on any worker without
//! coordination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, stream_index: 0 }
    }

    pub fn with_index(master_seed: u64, stream_index: u64) -> Self {
        Self { master_seed, stream_index }
    }

    /// Child stream `index` of this stream. Children of distinct parents or
    /// with distinct indices get distinct keys.
    pub fn substream(&self, index: u64) -> Self {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream_index.rotate_left(17) ^ 0xA076_1D64_78BD_642F));
        Self { master_seed: key, stream_index: index }
    }

    /// Named child, used to separate the randomness of different tasks run
    /// from one seed.
    pub fn fork(&self, label: &str) -> Self {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        Self { master_seed: splitmix64(self.master_seed ^ h), stream_index: self.stream_index }
    }

    pub fn rng(&self) -> StreamRng {
        let mut r = ChaCha8Rng::seed_from_u64(self.master_seed);
        r.set_stream(self.stream_index);
        r
    }
}
