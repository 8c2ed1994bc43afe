//! Deterministic per-component RNG streams.
//!
//! A single experiment seed is expanded into independent streams keyed by a
//! component tag, so adding a component never perturbs the randomness seen by
//! the others. The tag is folded into the seed with FNV-1a; the stream itself
//! is ChaCha12, which is reproducible across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derives the seed for component `tag` under the experiment seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let h = fnv1a(tag.as_bytes(), FNV_OFFSET);
    fnv1a(&seed.to_le_bytes(), h)
}

/// RNG stream for component `tag` under the experiment seed.
pub fn stream(seed: u64, tag: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Stream for the `index`-th member of a family of tasks (trajectories,
/// training samples) under one component tag.
pub fn indexed_stream(seed: u64, tag: &str, index: u64) -> ChaCha12Rng {
    let h = fnv1a(tag.as_bytes(), FNV_OFFSET);
    let h = fnv1a(&seed.to_le_bytes(), h);
    ChaCha12Rng::seed_from_u64(fnv1a(&index.to_le_bytes(), h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_tag_sensitive() {
        let a: f64 = stream(7, "sampler").random();
        let b: f64 = stream(7, "sampler").random();
        let c: f64 = stream(7, "noise").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
