//! Pieces shared by the three training loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pulsegate_tensor::AdamConfig;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: AdamConfig::default().learning_rate,
            seed,
            patience: None,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch size must be at least 2 for batch normalization",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Shuffled mini-batches of `0..n` for one epoch. A trailing batch of one
/// sample is dropped since batch statistics are undefined for it.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch)
        .filter(|c| c.len() > 1)
        .map(|c| c.to_vec())
        .collect()
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Seed for the dropout masks of one optimizer step.
pub(crate) fn step_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ ((epoch as u64) << 32) ^ batch as u64
}

pub(crate) fn check_finite(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_once() {
        let mut r = rng(1, 0);
        let b = epoch_batches(70, 32, &mut r);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..64).chain(64..70).collect::<Vec<_>>());
        let b = epoch_batches(65, 32, &mut r);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn divergence_reports_epoch() {
        assert!(matches!(
            check_finite(3, f64::NAN),
            Err(Error::Diverged { epoch: 3, .. })
        ));
    }
}
