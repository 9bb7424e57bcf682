//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for an independent stream: `master XOR mix64(stream)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    master ^ mix64(stream)
}

/// Named streams so unrelated consumers never share draws.
pub mod stream {
    pub const INIT: u64 = 0x1000;
    pub const DROPOUT: u64 = 0x2000;
    pub const SHUFFLE: u64 = 0x3000;
    pub const PRETEXT: u64 = 0x4000;
    pub const SSL_DROPOUT: u64 = 0x5000;
    pub const MASK: u64 = 0x6000;
    pub const DATA: u64 = 0x7000;
    pub const TTT: u64 = 0x8000;
    pub const SUBJECT: u64 = 0x9000;
}
