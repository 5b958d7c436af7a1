//! Derivation of independent RNG streams from one experiment seed.

pub(crate) const DATA_MEANS: u64 = 1;
pub(crate) const DATA_CLIENT: u64 = 2;
pub(crate) const LOCAL_TRAINING: u64 = 3;
pub(crate) const CLIENT_SAMPLING: u64 = 4;
pub(crate) const INIT: u64 = 5;
pub(crate) const STANDALONE: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `(purpose, index)` under `seed`.
pub fn derive(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index)
}

/// Seed for a per-round, per-client stream.
pub fn derive2(seed: u64, purpose: u64, a: u64, b: u64) -> u64 {
    derive(derive(seed, purpose, a), purpose, b)
}
