//! Deterministic random sub-streams derived from one master seed.
//!
//! Every random draw in the engines comes from a generator keyed by a small
//! tuple (purpose, step, stream, index). Two code paths that ask for the same
//! key get the same numbers, regardless of the order in which they ask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    pub const PROPAGATE: u64 = 1;
    pub const RESAMPLE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const DATA: u64 = 4;
    pub const RUN: u64 = 5;
    pub const ALGORITHM: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hands out independent generators for `(purpose, step, stream, index)` keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeder {
    master: u64,
}

impl StreamSeeder {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn derive_seed(&self, key: [u64; 4]) -> u64 {
        key.iter()
            .fold(splitmix64(self.master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
    }

    pub fn rng(&self, key: [u64; 4]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(key))
    }

    /// A child seeder, e.g. one per Monte Carlo run.
    pub fn child(&self, key: [u64; 4]) -> StreamSeeder {
        StreamSeeder::new(self.derive_seed(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn keys_are_reproducible_and_distinct() {
        let s = StreamSeeder::new(42);
        let a: u64 = s.rng([1, 2, 3, 4]).random();
        let b: u64 = s.rng([1, 2, 3, 4]).random();
        let c: u64 = s.rng([1, 2, 3, 5]).random();
        let d: u64 = StreamSeeder::new(43).rng([1, 2, 3, 4]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
