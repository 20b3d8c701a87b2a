//! Seeded random streams.
//!
//! Every random choice in the toolkit is drawn from PCG-XSL-RR 128/64
//! (`rand_pcg::Pcg64`), seeded through `SeedableRng::seed_from_u64`.
//! Uniform reals are `(next_u64 >> 11) * 2^-53`.
//!
//! Per-item streams are derived from a global seed and a string key (an
//! instance id, optionally suffixed with a task name) as
//! `splitmix64(seed ^ fnv1a64(key))`, so output never depends on which
//! worker thread processed which item.

use rand::{RngCore, SeedableRng};
use rand_pcg::Pcg64;

pub type StreamRng = Pcg64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `key`.
pub fn fnv1a64(key: &str) -> u64 {
    key.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> StreamRng {
    Pcg64::seed_from_u64(seed)
}

/// Independent stream for one keyed item under a global seed.
pub fn stream_for(seed: u64, key: &str) -> StreamRng {
    seeded(splitmix64(seed ^ fnv1a64(key)))
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
