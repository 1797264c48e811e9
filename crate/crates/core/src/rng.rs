//! Named, reproducible random substreams.
//!
//! Every random draw in a run descends from one master seed. A substream seed is
//! derived as
//!
//! ```text
//! name_hash = fnv1a64(name bytes)            offset 0xcbf29ce484222325, prime 0x100000001b3
//! seed      = mix64(master ^ mix64(name_hash))
//! ```
//!
//! and an indexed child of a stream (one per epoch, sample, or head) is
//! `mix64(seed ^ mix64(index + 0x9e3779b97f4a7c15))`. `mix64` is the splitmix64
//! finalizer (`x ^= x >> 30; x *= 0xbf58476d1ce4e5b9; x ^= x >> 27;
//! x *= 0x94d049bb133111eb; x ^= x >> 31`). Streams are ChaCha8 generators
//! seeded from the 64-bit value with `SeedableRng::seed_from_u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// A seed plus the derivation rules for its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream(u64);

impl Stream {
    /// Top-level substream `name` of `master`.
    pub fn named(master: u64, name: &str) -> Self {
        Stream(mix64(master ^ mix64(fnv1a64(name.as_bytes()))))
    }

    pub fn from_seed(seed: u64) -> Self {
        Stream(seed)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn child(self, index: u64) -> Self {
        Stream(mix64(self.0 ^ mix64(index.wrapping_add(GOLDEN))))
    }

    pub fn sub(self, name: &str) -> Self {
        Stream(mix64(self.0 ^ mix64(fnv1a64(name.as_bytes()))))
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}
