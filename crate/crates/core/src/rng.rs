//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by the
//! run seed, a purpose tag and a block index, so enabling one component never
//! shifts the random sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Grow = 2,
    Shuffle = 3,
    Negatives = 4,
    Neighbors = 5,
    Eval = 6,
    KMeans = 7,
    Teacher = 8,
    Lsp = 9,
    Halve = 10,
    Anchors = 11,
    Synthetic = 12,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Stream, block: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(mix(seed ^ mix(block.wrapping_add(0x5EED))));
    rng.set_stream(purpose as u64);
    rng
}

/// Per-node generator derived from a step seed, used where work is spread
/// across threads but results must not depend on scheduling.
#[inline]
pub fn node_rng(step_seed: u64, side: u64, node: u32) -> Rng {
    Rng::seed_from_u64(mix(step_seed ^ mix((side << 32) | node as u64)))
}
