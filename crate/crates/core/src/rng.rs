//! Counter-based random streams keyed by `(seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for sample `index` under `seed`; independent of evaluation order.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
