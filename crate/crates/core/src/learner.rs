//! Softmax (multinomial logistic) regression on a synthetic Gaussian-mixture
//! classification task. This is the local learner every device runs.
//!
//! Parameters are stored row-major, one row of `feature_dim + 1` entries per
//! class with the bias last.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrivals::{Sample, Shard};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskParams {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Class `k` is centred at `mean_spacing * e_(k mod feature_dim)`, scaled up
    /// by `1 + k / feature_dim` when classes outnumber axes. Ignored when
    /// `class_means` is given.
    pub mean_spacing: f64,
    pub class_means: Option<Vec<Vec<f64>>>,
    pub noise_std: f64,
    pub test_set_size: usize,
}

impl Default for SyntheticTaskParams {
    fn default() -> Self {
        Self {
            num_classes: 4,
            feature_dim: 8,
            mean_spacing: 1.0,
            class_means: None,
            noise_std: 1.0,
            test_set_size: 2000,
        }
    }
}

impl SyntheticTaskParams {
    pub fn build(&self) -> Result<SyntheticTask> {
        if self.num_classes < 2 {
            return Err(Error::config("task.num_classes", "must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("task.feature_dim", "must be at least 1"));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::config("task.noise_std", "must be positive"));
        }
        let means = match &self.class_means {
            Some(means) => {
                if means.len() != self.num_classes
                    || means.iter().any(|m| m.len() != self.feature_dim)
                {
                    return Err(Error::config(
                        "task.class_means",
                        "need num_classes vectors of length feature_dim",
                    ));
                }
                means.clone()
            }
            None => (0..self.num_classes)
                .map(|k| {
                    let mut m = vec![0.0; self.feature_dim];
                    let ring = 1.0 + (k / self.feature_dim) as f64;
                    m[k % self.feature_dim] = self.mean_spacing * ring;
                    m
                })
                .collect(),
        };
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                if means[i] == means[j] {
                    return Err(Error::config(
                        "task.class_means",
                        format!("classes {i} and {j} share a mean"),
                    ));
                }
            }
        }
        Ok(SyntheticTask {
            means,
            noise_std: self.noise_std,
        })
    }
}

/// Validated Gaussian-mixture task with uniform class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    means: Vec<Vec<f64>>,
    noise_std: f64,
}

impl SyntheticTask {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_params(&self) -> usize {
        self.num_classes() * (self.feature_dim() + 1)
    }

    pub fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let label = rng.random_range(0..self.num_classes());
        let features = self.means[label]
            .iter()
            .map(|&mu| {
                let z: f64 = rng.sample(StandardNormal);
                mu + self.noise_std * z
            })
            .collect();
        Sample { features, label }
    }

    pub fn draw_dataset<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<Sample> {
        (0..size).map(|_| self.draw_sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    num_classes: usize,
    feature_dim: usize,
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            weights: vec![0.0; num_classes * (feature_dim + 1)],
        }
    }

    pub fn from_flat(num_classes: usize, feature_dim: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), num_classes * (feature_dim + 1));
        Self {
            num_classes,
            feature_dim,
            weights,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn row(&self, class: usize) -> &[f64] {
        let stride = self.feature_dim + 1;
        &self.weights[class * stride..(class + 1) * stride]
    }

    fn log_softmax(&self, features: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for c in 0..self.num_classes {
            let row = self.row(c);
            let z = row[..self.feature_dim]
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + row[self.feature_dim];
            out.push(z);
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for z in out.iter_mut() {
            *z -= lse;
        }
    }
}

/// Mean cross-entropy over `batch` and its gradient (added into `grad`).
pub fn cross_entropy_and_grad(params: &ModelParams, batch: &[&Sample], grad: &mut [f64]) -> f64 {
    let stride = params.feature_dim + 1;
    let scale = 1.0 / batch.len() as f64;
    let mut logp = Vec::with_capacity(params.num_classes);
    let mut loss = 0.0;
    for sample in batch {
        params.log_softmax(&sample.features, &mut logp);
        loss -= logp[sample.label];
        for (c, lp) in logp.iter().enumerate() {
            let resid = (lp.exp() - if c == sample.label { 1.0 } else { 0.0 }) * scale;
            let row = &mut grad[c * stride..(c + 1) * stride];
            for (g, x) in row[..params.feature_dim].iter_mut().zip(&sample.features) {
                *g += resid * x;
            }
            row[params.feature_dim] += resid;
        }
    }
    loss * scale
}

/// Cross-entropy plus the proximal term `lambda/2 * ||w - anchor||^2`.
pub fn regularized_loss_and_grad(
    params: &ModelParams,
    anchor: &ModelParams,
    lambda: f64,
    batch: &[&Sample],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.weights.len()];
    let mut loss = cross_entropy_and_grad(params, batch, &mut grad);
    for ((g, w), a) in grad.iter_mut().zip(&params.weights).zip(&anchor.weights) {
        let d = w - a;
        loss += 0.5 * lambda * d * d;
        *g += lambda * d;
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct LocalSgdOutcome {
    pub params: ModelParams,
    /// `w_start - w_end`.
    pub displacement: Vec<f64>,
    pub steps: usize,
}

/// Minibatch SGD on the proximal-regularised cross-entropy, anchored at `anchor`.
pub fn local_sgd<R: Rng + ?Sized>(
    start: &ModelParams,
    anchor: &ModelParams,
    shards: &[Shard],
    cfg: &SgdConfig,
    rng: &mut R,
) -> std::result::Result<LocalSgdOutcome, NonFinite> {
    let mut samples: Vec<&Sample> = shards.iter().flat_map(|s| s.samples.iter()).collect();
    let mut params = start.clone();
    let mut steps = 0;
    let batch_size = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        samples.shuffle(rng);
        for batch in samples.chunks(batch_size) {
            let (_, grad) = regularized_loss_and_grad(&params, anchor, cfg.lambda, batch);
            for (w, g) in params.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            steps += 1;
        }
        if params.weights.iter().any(|w| !w.is_finite()) {
            return Err(NonFinite);
        }
    }
    let displacement = start
        .weights
        .iter()
        .zip(&params.weights)
        .map(|(a, b)| a - b)
        .collect();
    Ok(LocalSgdOutcome {
        params,
        displacement,
        steps,
    })
}

/// Marker for a diverged local step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFinite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and top-1 accuracy. Ties in the argmax go to the lowest class.
pub fn evaluate(params: &ModelParams, dataset: &[Sample]) -> Evaluation {
    assert!(!dataset.is_empty(), "evaluation set must be nonempty");
    let mut logp = Vec::with_capacity(params.num_classes);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in dataset {
        params.log_softmax(&s.features, &mut logp);
        loss -= logp[s.label];
        let mut best = 0;
        for c in 1..logp.len() {
            if logp[c] > logp[best] {
                best = c;
            }
        }
        if best == s.label {
            correct += 1;
        }
    }
    Evaluation {
        loss: loss / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
    }
}

/// What the FL engine needs from a local learner.
pub trait Learner: Send + Sync {
    fn num_params(&self) -> usize;

    fn initial_params(&self) -> Vec<f64>;

    /// Local gradient estimate `(w_start - w_end) / (lr * steps)` of one round of
    /// local training started from (and anchored at) the central parameters.
    /// `None` on divergence.
    fn local_gradient(&self, central: &[f64], shards: &[Shard], rng: &mut dyn rand::RngCore)
        -> Option<Vec<f64>>;

    fn evaluate(&self, params: &[f64]) -> Evaluation;
}

/// [`Learner`] backed by the synthetic task and a fixed held-out test set.
#[derive(Debug, Clone)]
pub struct SoftmaxLearner {
    task: SyntheticTask,
    sgd: SgdConfig,
    test_set: Vec<Sample>,
}

impl SoftmaxLearner {
    pub fn new(task: SyntheticTask, sgd: SgdConfig, test_set: Vec<Sample>) -> Self {
        Self {
            task,
            sgd,
            test_set,
        }
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    fn wrap(&self, w: &[f64]) -> ModelParams {
        ModelParams::from_flat(self.task.num_classes(), self.task.feature_dim(), w.to_vec())
    }
}

impl Learner for SoftmaxLearner {
    fn num_params(&self) -> usize {
        self.task.num_params()
    }

    fn initial_params(&self) -> Vec<f64> {
        vec![0.0; self.num_params()]
    }

    fn local_gradient(
        &self,
        central: &[f64],
        shards: &[Shard],
        rng: &mut dyn rand::RngCore,
    ) -> Option<Vec<f64>> {
        let anchor = self.wrap(central);
        let out = local_sgd(&anchor, &anchor, shards, &self.sgd, rng).ok()?;
        if out.steps == 0 {
            return Some(vec![0.0; central.len()]);
        }
        let scale = 1.0 / (self.sgd.learning_rate * out.steps as f64);
        Some(out.displacement.into_iter().map(|d| d * scale).collect())
    }

    fn evaluate(&self, params: &[f64]) -> Evaluation {
        evaluate(&self.wrap(params), &self.test_set)
    }
}
