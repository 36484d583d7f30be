//! Seeded random streams.
//!
//! Every consumer of randomness derives its own generator from the run seed,
//! a stream tag and one or more counters, so streams never perturb each other
//! and any batch can be regenerated from `(seed, step)` alone.

use rand::SeedableRng;

pub type StreamRng = rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    InitialSplit = 2,
    LabeledBatch = 3,
    UnlabeledBatch = 4,
    Augment = 5,
    Scoring = 6,
    RandomQuery = 7,
    Dropout = 8,
    Synthetic = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash `seed`, a stream tag and counters into a single 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &c in counters {
        h = splitmix(h ^ c);
    }
    h
}

pub fn stream(seed: u64, stream: Stream, counters: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream, counters))
}
