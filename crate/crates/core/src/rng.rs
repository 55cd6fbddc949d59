//! Seed derivation and per-stream generators.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is
//! derived from a base seed and a path of integer labels. Streams for
//! distinct labels are independent, and a stream never depends on the
//! order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a sequence of labels.
pub fn derive(base: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix(base.wrapping_add(GOLDEN)), |acc, &l| {
        mix(acc ^ mix(l.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
    })
}

/// Hash a string label (model names, test names) into a `u64` label.
pub fn label(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
