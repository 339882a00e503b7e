//! Hierarchical seeding.
//!
//! Every random decision in a run descends from one master seed. Substreams
//! are derived by mixing the parent seed with a stream label through the
//! SplitMix64 finalizer, which gives well-separated streams without any
//! coordination between consumers. The same (parent, label) pair always
//! yields the same stream, so cohort runs, design draws and chains can be
//! executed in parallel or re-executed in isolation without changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels for the top-level consumers of the master seed. Arbitrary
/// distinct constants; stability across versions is what matters.
pub mod streams {
    pub const TARGET: u64 = 0x01;
    pub const WAVE: u64 = 0x02;
    pub const TRAINING: u64 = 0x03;
    pub const HYPEROPT: u64 = 0x04;
    pub const CALIBRATION: u64 = 0x05;
    pub const EVAL: u64 = 0x06;
    pub const RESAMPLE: u64 = 0x07;
    pub const REWEIGHT: u64 = 0x08;
    pub const PERSON: u64 = 0x11;
    pub const AGE_ASSIGNMENT: u64 = 0x12;
}

/// SplitMix64 finalizer. Bijective on u64, good avalanche behavior.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream label.
#[inline]
pub fn child_seed(parent: u64, stream: u64) -> u64 {
    mix(parent ^ stream.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Convenience for the common two-level case (stream, then index within it).
#[inline]
pub fn grandchild_seed(parent: u64, stream: u64, index: u64) -> u64 {
    child_seed(child_seed(parent, stream), index)
}

/// Generator seeded from a derived stream.
pub fn stream_rng(parent: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(parent, stream))
}

/// Generator for an indexed member of a stream (person in a cohort, point in
/// a design, chain in a sweep).
pub fn indexed_rng(parent: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(grandchild_seed(parent, stream, index))
}
