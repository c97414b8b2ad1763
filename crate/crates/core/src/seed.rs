//! Seed derivation and per-stream random generators.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 generator whose
//! seed is derived from a master seed plus a tuple of identifiers. Episodes
//! use the ChaCha stream id for the episode index, so sampling order and
//! worker count never change the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a 64-bit seed.
///
/// `h_0 = mix(master + φ)`, `h_{k+1} = mix(h_k ^ mix(word_k + (k+1)·φ))`
/// where φ is the 64-bit golden-ratio constant.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut h = mix64(master.wrapping_add(GOLDEN));
    for (k, &w) in words.iter().enumerate() {
        let salt = GOLDEN.wrapping_mul(k as u64 + 1);
        h = mix64(h ^ mix64(w.wrapping_add(salt)));
    }
    h
}

/// Generator for a single named stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hash of a slice of floats by bit pattern, used to fingerprint models and
/// policies in file headers.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h = mix64(values.len() as u64 ^ GOLDEN);
    for &v in values {
        h = mix64(h ^ v.to_bits()).wrapping_add(GOLDEN);
    }
    h
}
