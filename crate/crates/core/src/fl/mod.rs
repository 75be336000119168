//! Learning task: model parameters, per-sample losses and gradients, local
//! mini-batch SGD, the data-weighted global loss and test accuracy.

pub mod data;
pub mod estimate;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use data::{Dataset, MixtureSpec, Partition, PartitionKind};

/// Real parameter vector of even length. When the task's parameter count is
/// odd, the last entry is padding that the loss ignores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    /// Sigmoid regression for two classes, softmax regression otherwise.
    Logistic,
    /// One tanh hidden layer followed by a softmax output.
    Mlp { hidden: usize },
}

/// Loss definition: task, ridge weight and problem shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub task: Task,
    pub l2_reg: f64,
    pub classes: usize,
    pub feature_dim: usize,
    /// Affine logistic model (ignored by the MLP, which always has biases).
    pub bias: bool,
}

impl LossSpec {
    pub fn logistic(classes: usize, feature_dim: usize, l2_reg: f64) -> Self {
        Self {
            task: Task::Logistic,
            l2_reg,
            classes,
            feature_dim,
            bias: true,
        }
    }

    fn logit_count(&self) -> usize {
        if self.classes == 2 {
            1
        } else {
            self.classes
        }
    }

    fn input_dim(&self) -> usize {
        self.feature_dim + usize::from(self.bias)
    }

    /// Number of meaningful parameters.
    pub fn raw_dim(&self) -> usize {
        match self.task {
            Task::Logistic => self.logit_count() * self.input_dim(),
            Task::Mlp { hidden } => hidden * self.feature_dim + hidden + self.classes * hidden + self.classes,
        }
    }

    /// Transmitted dimension `D`: `raw_dim` rounded up to even.
    pub fn dim(&self) -> usize {
        let r = self.raw_dim();
        r + r % 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "need >= 2 classes and >= 1 feature, got {} and {}",
                self.classes, self.feature_dim
            )));
        }
        if !(self.l2_reg >= 0.0) {
            return Err(Error::InvalidConfig("l2_reg must be nonnegative".into()));
        }
        if let Task::Mlp { hidden: 0 } = self.task {
            return Err(Error::InvalidConfig("MLP needs hidden units".into()));
        }
        Ok(())
    }

    /// Zeroes the padding entry, if any.
    pub fn clear_padding(&self, theta: &mut ModelVector) {
        for x in &mut theta.0[self.raw_dim()..] {
            *x = 0.0;
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim != self.feature_dim || data.classes != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: data.feature_dim,
            });
        }
        Ok(())
    }

    /// Class scores for one sample (a single logit for binary logistic).
    pub fn scores(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        match self.task {
            Task::Logistic => {
                let d = self.input_dim();
                (0..self.logit_count())
                    .map(|v| {
                        let w = &theta[v * d..(v + 1) * d];
                        let mut z: f64 = w[..self.feature_dim].iter().zip(x).map(|(a, b)| a * b).sum();
                        if self.bias {
                            z += w[self.feature_dim];
                        }
                        z
                    })
                    .collect()
            }
            Task::Mlp { hidden } => self.mlp_forward(theta, x, hidden).1,
        }
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        let z = self.scores(theta, x);
        if z.len() == 1 {
            return usize::from(z[0] > 0.0);
        }
        let mut best = 0;
        for (v, &s) in z.iter().enumerate().skip(1) {
            if s > z[best] {
                best = v;
            }
        }
        best
    }

    fn mlp_forward(&self, theta: &[f64], x: &[f64], hidden: usize) -> (Vec<f64>, Vec<f64>) {
        let b = self.feature_dim;
        let v = self.classes;
        let (w1, rest) = theta.split_at(hidden * b);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, rest) = rest.split_at(v * hidden);
        let b2 = &rest[..v];
        let a: Vec<f64> = (0..hidden)
            .map(|j| {
                let pre: f64 = w1[j * b..(j + 1) * b].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b1[j];
                pre.tanh()
            })
            .collect();
        let z = (0..v)
            .map(|c| w2[c * hidden..(c + 1) * hidden].iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + b2[c])
            .collect();
        (a, z)
    }

    /// Sample loss, accumulating `scale * gradient` into `grad` when given.
    /// The ridge term is not included.
    pub fn sample_loss(&self, theta: &[f64], x: &[f64], y: usize, grad: Option<(&mut [f64], f64)>) -> f64 {
        match self.task {
            Task::Logistic if self.classes == 2 => {
                let z = self.scores(theta, x)[0];
                let t = y as f64;
                let loss = softplus(z) - t * z;
                if let Some((g, s)) = grad {
                    let r = (sigmoid(z) - t) * s;
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += r * xi;
                    }
                    if self.bias {
                        g[self.feature_dim] += r;
                    }
                }
                loss
            }
            Task::Logistic => {
                let z = self.scores(theta, x);
                let (lse, p) = softmax(&z);
                let loss = lse - z[y];
                if let Some((g, s)) = grad {
                    let d = self.input_dim();
                    for (v, pv) in p.iter().enumerate() {
                        let r = (pv - f64::from(u8::from(v == y))) * s;
                        let gv = &mut g[v * d..(v + 1) * d];
                        for (gi, xi) in gv.iter_mut().zip(x) {
                            *gi += r * xi;
                        }
                        if self.bias {
                            gv[self.feature_dim] += r;
                        }
                    }
                }
                loss
            }
            Task::Mlp { hidden } => {
                let (a, z) = self.mlp_forward(theta, x, hidden);
                let (lse, p) = softmax(&z);
                let loss = lse - z[y];
                if let Some((g, s)) = grad {
                    let b = self.feature_dim;
                    let v = self.classes;
                    let w2 = &theta[hidden * b + hidden..hidden * b + hidden + v * hidden];
                    let dz: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(c, pc)| (pc - f64::from(u8::from(c == y))) * s)
                        .collect();
                    let (gw1, rest) = g.split_at_mut(hidden * b);
                    let (gb1, rest) = rest.split_at_mut(hidden);
                    let (gw2, rest) = rest.split_at_mut(v * hidden);
                    let gb2 = &mut rest[..v];
                    for c in 0..v {
                        gb2[c] += dz[c];
                        for j in 0..hidden {
                            gw2[c * hidden + j] += dz[c] * a[j];
                        }
                    }
                    for j in 0..hidden {
                        let da: f64 = (0..v).map(|c| w2[c * hidden + j] * dz[c]).sum();
                        let dpre = da * (1.0 - a[j] * a[j]);
                        gb1[j] += dpre;
                        for (gi, xi) in gw1[j * b..(j + 1) * b].iter_mut().zip(x) {
                            *gi += dpre * xi;
                        }
                    }
                }
                loss
            }
        }
    }

    fn ridge(&self, theta: &[f64]) -> f64 {
        0.5 * self.l2_reg * theta[..self.raw_dim()].iter().map(|x| x * x).sum::<f64>()
    }

    fn add_ridge_grad(&self, theta: &[f64], g: &mut [f64]) {
        for (gi, ti) in g[..self.raw_dim()].iter_mut().zip(theta) {
            *gi += self.l2_reg * ti;
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-sum-exp and the softmax probabilities.
fn softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

/// `F_k(theta)`: mean sample loss over `indices` plus `(l2_reg / 2) ||theta||^2`.
pub fn local_loss(theta: &ModelVector, data: &Dataset, indices: &[usize], spec: &LossSpec) -> Result<f64> {
    spec.check_theta(&theta.0)?;
    spec.check_data(data)?;
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = indices
        .iter()
        .map(|&i| spec.sample_loss(&theta.0, data.row(i), data.labels[i], None))
        .sum();
    Ok(sum / indices.len() as f64 + spec.ridge(&theta.0))
}

/// Mean gradient over `batch` (duplicates count once per occurrence) plus the ridge gradient.
pub fn local_grad(theta: &ModelVector, data: &Dataset, batch: &[usize], spec: &LossSpec) -> Result<ModelVector> {
    spec.check_theta(&theta.0)?;
    spec.check_data(data)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = vec![0.0; spec.dim()];
    let s = 1.0 / batch.len() as f64;
    for &i in batch {
        spec.sample_loss(&theta.0, data.row(i), data.labels[i], Some((&mut g, s)));
    }
    spec.add_ridge_grad(&theta.0, &mut g);
    Ok(ModelVector(g))
}

/// `sum_k (S_k / S) F_k(theta)`.
pub fn global_loss(theta: &ModelVector, data: &Dataset, partition: &Partition, spec: &LossSpec) -> Result<f64> {
    let w = partition.weights();
    partition
        .shards
        .iter()
        .zip(w)
        .map(|(sh, wk)| local_loss(theta, data, sh, spec).map(|f| wk * f))
        .sum()
}

/// Full gradient of the global loss.
pub fn global_grad(theta: &ModelVector, data: &Dataset, partition: &Partition, spec: &LossSpec) -> Result<ModelVector> {
    let w = partition.weights();
    let mut g = vec![0.0; spec.dim()];
    for (sh, wk) in partition.shards.iter().zip(w) {
        let gk = local_grad(theta, data, sh, spec)?;
        for (a, b) in g.iter_mut().zip(&gk.0) {
            *a += wk * b;
        }
    }
    Ok(ModelVector(g))
}

/// Fraction of test samples whose argmax prediction matches the label.
pub fn evaluate_accuracy(theta: &ModelVector, test: &Dataset, spec: &LossSpec) -> Result<f64> {
    spec.check_theta(&theta.0)?;
    spec.check_data(test)?;
    if test.is_empty() {
        return Err(Error::InvalidConfig("empty test set".into()));
    }
    let hits = (0..test.len())
        .filter(|&i| spec.predict(&theta.0, test.row(i)) == test.labels[i])
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// A device's local objective as seen by mini-batch SGD.
pub trait LocalObjective {
    fn sample_count(&self) -> usize;
    fn dim(&self) -> usize;
    /// Mean gradient over the given local sample positions.
    fn batch_gradient(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>>;
}

/// One device's shard of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct DeviceData<'a> {
    pub data: &'a Dataset,
    pub shard: &'a [usize],
    pub spec: &'a LossSpec,
}

impl LocalObjective for DeviceData<'_> {
    fn sample_count(&self) -> usize {
        self.shard.len()
    }

    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn batch_gradient(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        let idx: Vec<usize> = batch.iter().map(|&j| self.shard[j]).collect();
        local_grad(&ModelVector(theta.to_vec()), self.data, &idx, self.spec).map(|g| g.0)
    }
}

/// Output of `J` local SGD steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdateResult {
    pub theta_j: ModelVector,
    /// `theta_j - theta_0`; `theta_j` is computed as `theta_0 + delta`.
    pub delta: ModelVector,
}

/// Runs `J` steps of `theta <- theta - eta * grad(theta; B)`, each with a fresh
/// batch drawn uniformly without replacement.
pub fn local_update<O: LocalObjective + ?Sized, R: Rng + ?Sized>(
    theta0: &ModelVector,
    objective: &O,
    eta: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<LocalUpdateResult> {
    let n = objective.sample_count();
    if !(eta > 0.0) || steps == 0 || batch_size == 0 || batch_size > n {
        return Err(Error::InvalidConfig(format!(
            "local update needs eta > 0, J >= 1, 1 <= batch <= {n}; got eta={eta}, J={steps}, batch={batch_size}"
        )));
    }
    if theta0.dim() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            got: theta0.dim(),
        });
    }
    let mut delta = vec![0.0; theta0.dim()];
    let mut theta = theta0.0.clone();
    for _ in 0..steps {
        let batch = rand::seq::index::sample(rng, n, batch_size).into_vec();
        let g = objective.batch_gradient(&theta, &batch)?;
        for ((d, t), (gi, t0)) in delta.iter_mut().zip(theta.iter_mut()).zip(g.iter().zip(&theta0.0)) {
            *d -= eta * gi;
            *t = t0 + *d;
        }
    }
    Ok(LocalUpdateResult {
        theta_j: ModelVector(theta),
        delta: ModelVector(delta),
    })
}
