//! Named random streams.
//!
//! Every random draw in the pipelines comes from a stream keyed by
//! `(seed, component, a, b)`, so one instance's augmentation can be replayed
//! without replaying anything else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Mixes the key parts into one 64-bit stream seed.
pub fn stream_seed(seed: u64, component: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ fnv1a(component.as_bytes()));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(seed: u64, component: &str, a: u64, b: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, component, a, b))
}
