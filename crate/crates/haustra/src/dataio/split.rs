//! Sequence-level train/validation splitting.
//!
//! Splits operate on whole sequences, never on frames, so temporally
//! adjacent (nearly identical) frames cannot leak across the boundary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Partitions sequence ids into train and validation sets.
///
/// The ids are sorted before shuffling, so the outcome depends only on the
/// id set and the seed, not on input order. With at least two sequences both
/// sides are non-empty; a single sequence goes entirely to train.
pub fn split_sequences(ids: &[String], train_fraction: f64, seed: u64) -> Result<SplitResult> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("sequence id list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be strictly inside (0,1), got {train_fraction}"
        )));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::InvalidArgument(
            "sequence ids must be unique".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    let n_train = if n == 1 {
        1
    } else {
        ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
    };
    let val = sorted.split_off(n_train);
    Ok(SplitResult { train: sorted, val })
}
