//! Root-seed to child-seed derivation.
//!
//! Every randomized component takes a child seed derived from the run's single
//! root seed and a stream index, so sweeps are reproducible point-by-point and
//! parallel execution cannot reorder random draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives the child seed for stream `index` from `root`.
///
/// The scheme is a SplitMix64 finalizer over `root + index * GOLDEN`, which
/// maps distinct (root, index) pairs to well-spread 64-bit seeds. It is a pure
/// counter scheme: child `i` never depends on how many other children exist.
pub fn child_seed(root: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut z = root.wrapping_add(index.wrapping_mul(GOLDEN)).wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for one child stream.
pub fn child_rng(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(root, index))
}
