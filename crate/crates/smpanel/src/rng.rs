//! Seeded random streams.
//!
//! Every unit of work (a subject, a bootstrap replicate, a parameter draw)
//! gets its own ChaCha stream derived from the master seed, a domain tag
//! and an index, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags keep streams for different purposes apart.
pub mod domain {
    pub const PROPOSAL: u64 = 1;
    pub const SIMULATE: u64 = 2;
    pub const OBSERVE: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const PARAM_DRAW: u64 = 5;
    pub const FUNCTIONAL: u64 = 6;
    pub const KNOTS: u64 = 7;
    pub const REJECTION: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, for handing a fresh master seed to a nested task.
pub fn child_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ splitmix64(index.wrapping_add(0x5bd1_e995)))
}
