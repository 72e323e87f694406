//! Seed mixing for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b)
}

/// Seed of child `index` spawned from a run seeded with `parent_seed` at
/// epoch `spawn_epoch`.
pub fn derive_child_seed(parent_seed: u64, index: usize, spawn_epoch: f64) -> u64 {
    mix(mix(parent_seed, splitmix64(index as u64 + 1)), spawn_epoch.to_bits())
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic version-4-shaped UUID derived from a seed.
pub fn run_id(seed: u64, tag: &str) -> String {
    let t = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let hi = mix(seed, t);
    let lo = mix(hi, seed);
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&hi.to_le_bytes());
    bytes[8..].copy_from_slice(&lo.to_le_bytes());
    uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
}
