//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own generator from
//! `(seed, stream, step)` so that a run can be resumed mid-way, or a batch
//! recomputed, without replaying earlier draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named purposes for random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    RealBatch = 2,
    Latent = 3,
    FakeLabels = 4,
    RandomLabels = 5,
    LabelSubsample = 6,
    Evaluation = 7,
    Clustering = 8,
    Pretrain = 9,
    Synthetic = 10,
    Rotation = 11,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes, for folding identifiers into seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(seed: u64, stream: Stream, step: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ stream as u64) ^ step)
}

pub fn stream_rng(seed: u64, stream: Stream, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, step))
}
