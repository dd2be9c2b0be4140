//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed (through
//! `seed_from_u64`) with its ChaCha stream number derived from the pair
//! `(component, index)`:
//!
//! ```text
//! stream = splitmix64(fnv1a64(component) ^ splitmix64(index))
//! ```
//!
//! so results are reproducible from the master seed, a component name and an
//! index alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Independent stream `index` of `component` under `seed`.
pub fn stream(seed: u64, component: &str, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(fnv1a64(component.as_bytes()) ^ splitmix64(index)));
    rng
}
