//! Keyed random streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha stream selected by
//! `(seed, domain, index)`. Streams are independent of the order in which
//! they are created, so results do not depend on the parallel schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each stochastic procedure owns one so their draws never
/// overlap even under a shared user seed.
pub mod domain {
    pub const SAMPLE: u64 = 1;
    pub const COHORT_VALUES: u64 = 2;
    pub const COHORT_OUTCOME: u64 = 3;
    pub const CV_FOLDS: u64 = 4;
    pub const COHORT_STUDY: u64 = 5;
}

pub fn keyed_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, used where a whole sub-study needs its own seed.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::Rng;
    keyed_rng(seed, domain, index).random()
}
