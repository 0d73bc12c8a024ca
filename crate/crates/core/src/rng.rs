//! Labeled random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainData = 1,
    TestData = 2,
    Init = 3,
    Shuffle = 4,
    CriticInit = 5,
    RefineInit = 6,
}

/// Independent ChaCha stream for `(seed, label)`.
pub fn stream(seed: u64, label: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Stream for item `index` under `(seed, label)`; used where work is split
/// per sample or per epoch so the result does not depend on iteration order.
pub fn indexed(seed: u64, label: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((label as u64) << 40) | index);
    rng
}
