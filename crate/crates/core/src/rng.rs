//! Seeded random streams.
//!
//! A single master seed feeds every stochastic operation. Each consumer asks
//! for its own stream id, so adding a consumer never perturbs the numbers
//! drawn by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used inside the engine. Callers may use any other value.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const NEGATIVES: u64 = 5;
    pub const REPARAM: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const EDGE_SPLIT: u64 = 8;
}

/// Master seed from which independent ChaCha streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngService {
    seed: u64,
}

impl RngService {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A counter-based generator positioned at the start of `stream`.
    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// A child service for repetition `index`; children with distinct
    /// indices share no streams.
    pub fn derive(&self, index: u64) -> RngService {
        // splitmix64 finaliser keeps nearby (seed, index) pairs apart
        let mut z = self
            .seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngService::new(z ^ (z >> 31))
    }
}
