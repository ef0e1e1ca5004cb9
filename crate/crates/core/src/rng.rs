//! Seeded random streams.
//!
//! Every dataset draws from its own ChaCha12 stream whose 256-bit key is
//! derived from the master seed and a path of indices (for a study:
//! theta index, sigma index, replicate index) by chaining SplitMix64. Any
//! single dataset can therefore be regenerated in isolation, and results
//! do not depend on the order in which work units run.
//!
//! Normal deviates use the ziggurat sampler of `rand_distr`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Identifies the generator in output metadata.
pub const ALGORITHM: &str = "chacha12/splitmix64-substreams/ziggurat-normal";

pub type StreamRng = ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream addressed by `path` under `master_seed`.
pub fn substream(master_seed: u64, path: &[u64]) -> StreamRng {
    let mut state = master_seed;
    let mut h = splitmix64(&mut state);
    for &p in path {
        let mut s = h ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        h = splitmix64(&mut s);
    }
    let mut seed = [0u8; 32];
    let mut s = h;
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// One standard normal deviate.
pub fn normal_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
