//! Seeded, splittable randomness.
//!
//! Every stochastic step draws from a generator derived from a root seed and a
//! path of integer tags, so results do not depend on evaluation order or on
//! how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree. Cheap to copy; `child` derives independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(splitmix(seed))
    }

    pub fn child(self, tag: u64) -> Self {
        SeedStream(splitmix(
            self.0 ^ splitmix(tag.wrapping_add(0x632B_E59B_D9B4_E019)),
        ))
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// Tags used to derive per-purpose streams.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}
