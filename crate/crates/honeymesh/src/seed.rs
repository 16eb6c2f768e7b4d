//! Deterministic RNG substreams derived from the scenario seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Independent RNG stream for one labeled purpose. The same (seed, label)
/// pair always yields the same stream, and distinct labels decorrelate.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ fnv1a(label))
}
