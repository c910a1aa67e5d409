use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Training fractions of the sample-efficiency protocol.
pub const FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Nested training subsets, one per fraction: a seeded shuffle of
/// `0..n_pairs` truncated to `floor(f · n_pairs)`, each returned sorted.
pub fn dataset_split(n_pairs: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    fractions
        .iter()
        .map(|&f| {
            if !FRACTIONS.contains(&f) {
                return Err(Error::Config(format!("fraction {f} not in {{1, 1/2, 1/4, 1/8}}")));
            }
            let k = (f * n_pairs as f64).floor() as usize;
            if k == 0 {
                return Err(Error::Config(format!("fraction {f} of {n_pairs} pairs is empty")));
            }
            let mut s = order[..k].to_vec();
            s.sort_unstable();
            Ok(s)
        })
        .collect()
}
