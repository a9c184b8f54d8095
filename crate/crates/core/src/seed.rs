//! Named sub-seeds fanned out from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `std`'s hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, name: &str) -> u64 {
    splitmix(master ^ fnv1a(name.as_bytes()))
}

pub fn derive_indexed(master: u64, name: &str, index: u64) -> u64 {
    splitmix(derive(master, name) ^ splitmix(index))
}

pub fn rng(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive(master, name))
}

pub fn rng_indexed(master: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(master, name, index))
}
