//! Seeded random streams.
//!
//! Every repetition owns an independent ChaCha8 stream (a counter-based
//! generator). Its 64-bit seed is derived from the master seed and the
//! repetition index with SplitMix64 finalizers:
//!
//! ```text
//! seed_r = splitmix64(master ^ splitmix64(r))
//! ```
//!
//! which is then expanded to the 256-bit ChaCha key by `SeedableRng::seed_from_u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 output function applied to `x + γ`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rep_seed(master: u64, rep: u64) -> u64 {
    splitmix64(master ^ splitmix64(rep))
}

pub fn rep_rng(master: u64, rep: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(rep_seed(master, rep))
}

/// Seed for a named sub-stream of a repetition (e.g. clustering restarts), so
/// that changing how many draws the data generator consumes never shifts it.
pub fn substream_seed(master: u64, rep: u64, stream: u64) -> u64 {
    splitmix64(rep_seed(master, rep) ^ splitmix64(stream.wrapping_add(0xA5A5_A5A5)))
}
