//! Counter-derived random streams.
//!
//! Every Monte Carlo draw in the crate comes from a ChaCha8 stream addressed
//! by `(seed, experiment, index)`. The seed and experiment id select the key,
//! the sample index selects the ChaCha stream, so sample `i` sees the same
//! numbers whatever thread runs it and however rayon batches the work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Root of a family of independent substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub experiment: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            experiment: 0,
        }
    }

    /// A sibling family for a sub-experiment. Distinct ids give disjoint keys.
    pub fn derive(&self, experiment: u64) -> Self {
        Self {
            seed: self.seed,
            experiment: splitmix64(self.experiment ^ splitmix64(experiment.wrapping_add(1))),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.experiment.to_le_bytes());
        key[16..24].copy_from_slice(&splitmix64(self.seed).to_le_bytes());
        key[24..].copy_from_slice(&splitmix64(self.experiment).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(i, stream_i)` for `i in 0..n` on the current rayon pool and
/// returns results in index order.
pub fn par_map_indexed<T, F>(key: StreamKey, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i as u64);
            f(i, &mut rng)
        })
        .collect()
}
