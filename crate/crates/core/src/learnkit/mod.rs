//! Synthetic federated dataset generation, the 60-20-10 classifier,
//! mini-batch SGD local training, and evaluation.

mod model;
mod synthetic;

pub use model::{Activation, MlpParams, ModelArch};
pub use synthetic::{
    cache_key, gen_synthetic, label_skew_partition, load_or_generate, SyntheticParams,
    DATASET_CACHE_VERSION,
};

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::SatId;
use crate::error::{Result, SimError};

/// One satellite's private training shard.
#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub owner: SatId,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Held-out evaluation set.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loop counts and optimizer settings for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub intra_rounds: usize,
    pub local_updates: usize,
    pub eta: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 600,
            intra_rounds: 10,
            local_updates: 5,
            eta: 0.01,
            batch: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 || self.intra_rounds < 1 || self.local_updates < 1 {
            return Err(SimError::Config(format!(
                "rounds/intra_rounds/local_updates must be >= 1, got {}/{}/{}",
                self.rounds, self.intra_rounds, self.local_updates
            )));
        }
        if !(self.eta > 0.0) {
            return Err(SimError::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.batch < 1 {
            return Err(SimError::Config("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Normalized data weights `w = D_i / sum D`; they sum to one globally.
pub fn dataset_weights(datasets: &[LocalDataset]) -> Vec<f64> {
    let total: usize = datasets.iter().map(|d| d.len()).sum();
    datasets
        .iter()
        .map(|d| d.len() as f64 / total as f64)
        .collect()
}

/// `E` sequential mini-batch SGD steps with per-step uniform sampling
/// without replacement. Batches larger than the shard fall back to sampling
/// with replacement (flagged in the log); batches equal to the shard use it
/// whole.
pub fn local_sgd(
    arch: &ModelArch,
    params: &[f64],
    data: &LocalDataset,
    local_updates: usize,
    eta: f64,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if local_updates < 1 {
        return Err(SimError::Config("local_updates must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(SimError::Degenerate(format!(
            "satellite {} has no training data",
            data.owner
        )));
    }
    let n = data.len();
    let mut current = params.to_vec();
    for _ in 0..local_updates {
        let (x, y) = if batch >= n {
            if batch > n {
                log::warn!(
                    "batch {batch} exceeds dataset size {n} on {}; sampling with replacement",
                    data.owner
                );
                let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
                (
                    data.features.select(Axis(0), &idx),
                    idx.iter().map(|&i| data.labels[i]).collect::<Vec<u8>>(),
                )
            } else {
                (data.features.clone(), data.labels.clone())
            }
        } else {
            let idx = rand::seq::index::sample(rng, n, batch).into_vec();
            (
                data.features.select(Axis(0), &idx),
                idx.iter().map(|&i| data.labels[i]).collect::<Vec<u8>>(),
            )
        };
        let (_, grad) = arch.loss_grad(&current, x.view(), &y)?;
        for (p, g) in current.iter_mut().zip(&grad) {
            *p -= eta * g;
        }
    }
    Ok(current)
}

/// Mean loss and top-1 accuracy on the held-out set.
pub fn evaluate(arch: &ModelArch, params: &[f64], test: &TestSet) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(SimError::Degenerate("empty test set".into()));
    }
    let loss = arch.loss(params, test.features.view(), &test.labels)?;
    let predictions = arch.predict_batch(params, test.features.view())?;
    let correct = predictions
        .iter()
        .zip(&test.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok((loss, correct as f64 / test.len() as f64))
}
