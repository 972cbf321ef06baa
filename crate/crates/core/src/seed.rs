//! Root-seed fan-out.
//!
//! Every seeded component receives `xxh64(component_name, root_seed)`, so a
//! single `--seed` reproduces the whole pipeline while components stay
//! independent of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::xxh64;

pub fn derive_seed(root: u64, component: &str) -> u64 {
    xxh64(component.as_bytes(), root)
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
