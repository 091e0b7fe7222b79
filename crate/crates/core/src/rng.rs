//! Seeded random source.
//!
//! Every stochastic operation takes an explicit `&mut Rng`. ChaCha8 is used
//! because its output stream is fixed by the algorithm, so a seed yields the
//! same draws on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Creates the random source for `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one work item (patch set, camera, dataset).
///
/// Streams depend only on `seed ^ key`, never on scheduling order.
pub fn stream(seed: u64, key: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed ^ key)
}
