//! Splittable counter-based random streams.
//!
//! Atom-level and document-level updates are conditionally independent, so we
//! key a `ChaCha8` stream by `(seed, index)`. Draws are then reproducible and
//! order-independent: stream `k` produces the same values whether streams are
//! consumed sequentially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns the `index`th independent stream of the generator keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
