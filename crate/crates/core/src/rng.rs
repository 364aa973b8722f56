//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator every sampler draws from.
pub type RngStream = ChaCha8Rng;

/// A generator seeded from a single `u64`.
pub fn stream(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `id` of `seed`.
///
/// Parallel work items use one substream each so results do not depend on
/// how many threads ran them.
pub fn substream(seed: u64, id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_differ_and_repeat() {
        let draw = |id| -> Vec<u64> {
            let mut r = substream(9, id);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }
}
