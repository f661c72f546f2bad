//! Seeded random streams.
//!
//! All randomness derives from one root seed. Each consumer asks for a
//! named stream (`"data"`, `"init"`, `"augment"`, `"eval"`), optionally
//! indexed, so enabling a feature that draws from one stream never shifts
//! the numbers another stream produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of the named sub-stream of `root`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(name)))
}

/// Seed for item `index` within a stream.
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn stream(root: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, name))
}

pub fn indexed_stream(root: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_indexed(derive_seed(root, name), index))
}
