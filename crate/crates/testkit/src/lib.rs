//! Test harness for the diffusion analytics: cascade simulators, synthetic
//! datasets, and brute-force reference implementations. Nothing in here
//! calls into the code paths it is used to check.

pub mod cox;
pub mod datasets;
pub mod graphs;
pub mod normal;
pub mod requests;
pub mod simulate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
