//! Seedable, splittable random streams.
//!
//! Every stochastic operation takes an explicit `&mut SimRng`. Independent
//! streams are derived from a master seed and a tag path with a SplitMix64
//! mixer, so per-trial streams do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used by the experiment harness.
pub mod tag {
    pub const SOURCE: u64 = 0x5352_4300;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const DESIGN: u64 = 0x4445_5349;
    pub const DECODER: u64 = 0x4445_434f;
    pub const ENSEMBLE: u64 = 0x454e_5345;
    pub const REFINE: u64 = 0x5245_4649;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of tags into a child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Child stream for `(master, tags…)`.
pub fn stream(master: u64, tags: &[u64]) -> SimRng {
    seeded(derive_seed(master, tags))
}
