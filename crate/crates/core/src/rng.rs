//! Deterministic stream derivation.
//!
//! Every stochastic routine takes a `u64` seed and derives independent
//! per-trial generators by hashing (seed, trial index) through SplitMix64
//! into a ChaCha key. Streams are therefore reproducible bit-for-bit
//! regardless of thread count or trial scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `seed`: SplitMix64 of the pair.
/// Used to hand each Monte Carlo trial its own stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xa076_1d64_78bd_642f)))
}

/// Generator for stream `index` under `seed`. Distinct (seed, index) pairs
/// give independent, reproducible streams.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, index))
}
