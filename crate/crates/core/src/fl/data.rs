use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled samples stored row-major (`len × features`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, feature_dim: usize, classes: usize) -> Result<Self> {
        if feature_dim == 0 || features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * feature_dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&v| v >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// First `n` samples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features[..n * self.feature_dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            feature_dim: self.feature_dim,
            classes: self.classes,
        }
    }
}

/// Settings of the Gaussian-mixture generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub classes: usize,
    pub feature_dim: usize,
    /// Norm of each class mean; samples add unit-variance isotropic noise.
    pub separation: f64,
}

/// Class means for a mixture; drawn once so train and test share them.
pub fn mixture_means<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * spec.separation / n).collect()
        })
        .collect()
}

/// `n` samples with balanced, shuffled labels around the given means.
pub fn sample_mixture<R: Rng + ?Sized>(means: &[Vec<f64>], n: usize, rng: &mut R) -> Dataset {
    let classes = means.len();
    let dim = means[0].len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        for m in &means[y] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + z);
        }
    }
    Dataset {
        features,
        labels,
        feature_dim: dim,
        classes,
    }
}

/// Disjoint per-device index sets into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Shuffled, near-equal shard sizes.
    RandomEven,
    /// Samples sorted by label, then cut into contiguous shards.
    ByClass,
}

impl Partition {
    pub fn build<R: Rng + ?Sized>(data: &Dataset, devices: usize, kind: PartitionKind, rng: &mut R) -> Result<Self> {
        if devices == 0 || devices > data.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot split {} samples over {devices} devices",
                data.len()
            )));
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        match kind {
            PartitionKind::RandomEven => idx.shuffle(rng),
            PartitionKind::ByClass => idx.sort_by_key(|&i| (data.labels[i], i)),
        }
        let base = data.len() / devices;
        let extra = data.len() % devices;
        let mut shards = Vec::with_capacity(devices);
        let mut start = 0;
        for k in 0..devices {
            let len = base + usize::from(k < extra);
            shards.push(idx[start..start + len].to_vec());
            start += len;
        }
        Ok(Self { shards })
    }

    pub fn devices(&self) -> usize {
        self.shards.len()
    }

    pub fn total(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    /// `S_k / S` for every device.
    pub fn weights(&self) -> Vec<f64> {
        let s = self.total() as f64;
        self.shards.iter().map(|sh| sh.len() as f64 / s).collect()
    }

    /// All indices, in shard order.
    pub fn pooled(&self) -> Vec<usize> {
        self.shards.iter().flatten().copied().collect()
    }

    /// Checks disjointness and bounds against a dataset of `len` samples.
    pub fn validate(&self, len: usize) -> Result<()> {
        let mut seen = vec![false; len];
        for sh in &self.shards {
            if sh.is_empty() {
                return Err(Error::InvalidConfig("empty device shard".into()));
            }
            for &i in sh {
                if i >= len || seen[i] {
                    return Err(Error::InvalidConfig(format!("sample {i} out of range or shared")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}
