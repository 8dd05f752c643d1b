//! Synthetic non-IID federated classification task and the label-skew
//! partitioner.
//!
//! Each device draws its own softmax generator `(W_k, b_k)` around a device
//! mean `u_k ~ N(0, alpha)` and its own feature means around `B_k ~ N(0,
//! beta)`; features use the decaying diagonal covariance `Sigma_jj =
//! j^-1.2`. A global IID fraction of the pooled samples is held out for
//! evaluation.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{LocalDataset, TestSet};
use crate::constellation::SatId;
use crate::error::{Result, SimError};

pub const DATASET_CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub alpha: f64,
    pub beta: f64,
    pub size_min: usize,
    pub size_max: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub test_fraction: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            size_min: 50,
            size_max: 450,
            feature_dim: 60,
            num_classes: 10,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(SimError::Config(format!(
                "alpha/beta must be nonnegative, got {}/{}",
                self.alpha, self.beta
            )));
        }
        if self.size_min < 1 || self.size_max < self.size_min {
            return Err(SimError::Config(format!(
                "size range [{}, {}] is invalid",
                self.size_min, self.size_max
            )));
        }
        if self.feature_dim < 1 || self.num_classes < 2 {
            return Err(SimError::Config(format!(
                "feature_dim {} / num_classes {} are invalid",
                self.feature_dim, self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(SimError::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        mean
    } else {
        mean + std * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Generate one device's data from its private softmax generator.
fn gen_device(
    rng: &mut ChaCha8Rng,
    params: &SyntheticParams,
    size: usize,
) -> (Array2<f64>, Vec<u8>) {
    let dim = params.feature_dim;
    let classes = params.num_classes;

    let u = normal(rng, 0.0, params.alpha);
    let b_mean = normal(rng, 0.0, params.beta);
    let v: Vec<f64> = (0..dim).map(|_| normal(rng, b_mean, 1.0)).collect();
    let w: Vec<f64> = (0..classes * dim).map(|_| normal(rng, u, 1.0)).collect();
    let bias: Vec<f64> = (0..classes).map(|_| normal(rng, u, 1.0)).collect();
    // Per-coordinate std from Sigma_jj = j^-1.2, 1-indexed.
    let stds: Vec<f64> = (0..dim)
        .map(|j| ((j + 1) as f64).powf(-1.2).sqrt())
        .collect();

    let mut features = Array2::zeros((size, dim));
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        for j in 0..dim {
            features[(i, j)] = normal(rng, v[j], stds[j]);
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..classes {
            let mut score = bias[c];
            for j in 0..dim {
                score += w[c * dim + j] * features[(i, j)];
            }
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        labels.push(best as u8);
    }
    (features, labels)
}

/// Per-device datasets plus a globally held-out IID test set.
pub fn gen_synthetic(
    params: &SyntheticParams,
    owners: &[SatId],
    seed: u64,
) -> Result<(Vec<LocalDataset>, TestSet)> {
    params.validate()?;
    if owners.is_empty() {
        return Err(SimError::Config("at least one device is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut raw: Vec<(Array2<f64>, Vec<u8>)> = Vec::with_capacity(owners.len());
    for _ in owners {
        let size = rng.random_range(params.size_min..=params.size_max);
        raw.push(gen_device(&mut rng, params, size));
    }

    // Hold out an IID sample of the pooled data.
    let mut pool: Vec<(usize, usize)> = raw
        .iter()
        .enumerate()
        .flat_map(|(dev, (_, labels))| (0..labels.len()).map(move |i| (dev, i)))
        .collect();
    let total = pool.len();
    pool.shuffle(&mut rng);
    let test_count = (params.test_fraction * total as f64).floor() as usize;

    let mut held = vec![vec![false; 0]; raw.len()];
    for (dev, (_, labels)) in raw.iter().enumerate() {
        held[dev] = vec![false; labels.len()];
    }
    let mut kept = raw.iter().map(|(_, l)| l.len()).collect::<Vec<_>>();
    let mut test_rows: Vec<(usize, usize)> = Vec::with_capacity(test_count);
    for &(dev, i) in pool.iter() {
        if test_rows.len() >= test_count {
            break;
        }
        // Every device keeps at least one training sample.
        if kept[dev] <= 1 {
            continue;
        }
        held[dev][i] = true;
        kept[dev] -= 1;
        test_rows.push((dev, i));
    }

    let dim = params.feature_dim;
    let mut test_features = Array2::zeros((test_rows.len(), dim));
    let mut test_labels = Vec::with_capacity(test_rows.len());
    for (row, &(dev, i)) in test_rows.iter().enumerate() {
        test_features
            .row_mut(row)
            .assign(&raw[dev].0.index_axis(Axis(0), i));
        test_labels.push(raw[dev].1[i]);
    }

    let mut datasets = Vec::with_capacity(owners.len());
    for (dev, (features, labels)) in raw.into_iter().enumerate() {
        let keep: Vec<usize> = (0..labels.len()).filter(|&i| !held[dev][i]).collect();
        let kept_features = features.select(Axis(0), &keep);
        let kept_labels: Vec<u8> = keep.iter().map(|&i| labels[i]).collect();
        datasets.push(LocalDataset {
            features: kept_features,
            labels: kept_labels,
            owner: owners[dev],
        });
    }
    Ok((
        datasets,
        TestSet {
            features: test_features,
            labels: test_labels,
        },
    ))
}

/// Redistribute a pooled dataset so each satellite holds at most
/// `labels_per_device` distinct classes; the shards cover the whole input.
pub fn label_skew_partition(
    features: &Array2<f64>,
    labels: &[u8],
    owners: &[SatId],
    labels_per_device: usize,
    seed: u64,
) -> Result<Vec<LocalDataset>> {
    if labels_per_device < 1 {
        return Err(SimError::Config(
            "labels_per_device must be at least 1".into(),
        ));
    }
    if labels.len() != features.nrows() {
        return Err(SimError::LengthMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features.nrows()
        )));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if owners.len() * labels_per_device < classes.len() {
        return Err(SimError::Config(format!(
            "{} devices with {} labels each cannot cover {} classes",
            owners.len(),
            labels_per_device,
            classes.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_order = classes.clone();
    class_order.shuffle(&mut rng);

    // Round-robin class assignment guarantees coverage.
    let mut owners_of_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    let class_pos =
        |c: u8, classes: &[u8]| classes.binary_search(&c).expect("class present");
    let mut cursor = 0usize;
    for dev in 0..owners.len() {
        for _ in 0..labels_per_device {
            let class = class_order[cursor % class_order.len()];
            cursor += 1;
            let slot = class_pos(class, &classes);
            if !owners_of_class[slot].contains(&dev) {
                owners_of_class[slot].push(dev);
            }
        }
    }

    let mut rows_per_device: Vec<Vec<usize>> = vec![Vec::new(); owners.len()];
    for (slot, &class) in classes.iter().enumerate() {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let holders = &owners_of_class[slot];
        if rows.len() < holders.len() {
            return Err(SimError::Config(format!(
                "class {class} has only {} samples for {} holders",
                rows.len(),
                holders.len()
            )));
        }
        for (i, row) in rows.into_iter().enumerate() {
            rows_per_device[holders[i % holders.len()]].push(row);
        }
    }

    let mut out = Vec::with_capacity(owners.len());
    for (dev, rows) in rows_per_device.iter_mut().enumerate() {
        if rows.is_empty() {
            return Err(SimError::Config(format!(
                "device {dev} received no samples; not enough data for the requested skew"
            )));
        }
        rows.sort_unstable();
        out.push(LocalDataset {
            features: features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| labels[i]).collect(),
            owner: owners[dev],
        });
    }
    Ok(out)
}

// ---- dataset cache ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CachedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CachedMatrix {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().cloned().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| SimError::Config(format!("corrupt dataset cache: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct CachedDevice {
    features: CachedMatrix,
    labels: Vec<u8>,
    orbit: usize,
    slot: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    params: SyntheticParams,
    num_devices: usize,
    seed: u64,
    devices: Vec<CachedDevice>,
    test_features: CachedMatrix,
    test_labels: Vec<u8>,
}

/// Human-readable cache key derived from the generator parameters and seed.
pub fn cache_key(params: &SyntheticParams, num_devices: usize, seed: u64) -> String {
    format!(
        "synthetic_v{DATASET_CACHE_VERSION}_a{}_b{}_sz{}-{}_f{}_c{}_tf{}_n{}_s{}.json",
        params.alpha,
        params.beta,
        params.size_min,
        params.size_max,
        params.feature_dim,
        params.num_classes,
        params.test_fraction,
        num_devices,
        seed
    )
}

/// Load the keyed cache file if present, otherwise generate and persist.
pub fn load_or_generate(
    dir: &Path,
    params: &SyntheticParams,
    owners: &[SatId],
    seed: u64,
) -> Result<(Vec<LocalDataset>, TestSet)> {
    let path = dir.join(cache_key(params, owners.len(), seed));
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let file: CacheFile = serde_json::from_str(&text)
            .map_err(|e| SimError::Config(format!("corrupt dataset cache {path:?}: {e}")))?;
        if file.version == DATASET_CACHE_VERSION
            && file.params == *params
            && file.num_devices == owners.len()
            && file.seed == seed
        {
            let mut datasets = Vec::with_capacity(file.devices.len());
            for d in &file.devices {
                datasets.push(LocalDataset {
                    features: d.features.to_array()?,
                    labels: d.labels.clone(),
                    owner: SatId::new(d.orbit, d.slot),
                });
            }
            return Ok((
                datasets,
                TestSet {
                    features: file.test_features.to_array()?,
                    labels: file.test_labels,
                },
            ));
        }
    }

    let (datasets, test) = gen_synthetic(params, owners, seed)?;
    std::fs::create_dir_all(dir)?;
    let file = CacheFile {
        version: DATASET_CACHE_VERSION,
        params: *params,
        num_devices: owners.len(),
        seed,
        devices: datasets
            .iter()
            .map(|d| CachedDevice {
                features: CachedMatrix::from_array(&d.features),
                labels: d.labels.clone(),
                orbit: d.owner.orbit,
                slot: d.owner.slot,
            })
            .collect(),
        test_features: CachedMatrix::from_array(&test.features),
        test_labels: test.labels.clone(),
    };
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&file).expect("serializable"))?;
    std::fs::rename(&tmp, &path)?;
    Ok((datasets, test))
}
