//! Pairwise precondition classifier.
//!
//! Maps the features of a training task and a test task to the probability
//! that a skill taught on the former succeeds on the latter. The network is a
//! standardization layer, one rectified hidden layer and a logistic output,
//! trained with weighted binary cross-entropy and Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::task::Task;

pub const MODEL_VERSION: u32 = 1;

/// Predictions are kept this far away from 0 and 1.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub validation_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 32,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
            validation_split: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("hidden, epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::Invalid("validation split must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
}

/// Dense layer; `w` is `out x in`, row-major by output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: vec![vec![0.0; inp]; out],
            b: vec![0.0; out],
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().flatten().chain(self.b.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().flatten().chain(self.b.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionModel {
    pub version: u32,
    pub dims: Dims,
    pub normalization: Normalization,
    pub layer1: Dense,
    pub layer2: Dense,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent lanes so the loop vectorizes.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 4] = x.try_into().unwrap();
        let y: &[f64; 4] = y.try_into().unwrap();
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit against a (possibly soft) target.
fn bce_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layer1: Dense,
    pub layer2: Dense,
}

impl Gradients {
    fn zeros(dims: Dims) -> Self {
        Gradients {
            layer1: Dense::zeros(dims.hidden, dims.input),
            layer2: Dense::zeros(1, dims.hidden),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layer1.params().chain(self.layer2.params()).copied().collect()
    }

    fn reset(&mut self) {
        for p in self.layer1.params_mut().chain(self.layer2.params_mut()) {
            *p = 0.0;
        }
    }
}

impl PreconditionModel {
    /// Model with all weights and biases zero and identity normalization.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        PreconditionModel {
            version: MODEL_VERSION,
            dims: Dims { input, hidden },
            normalization: Normalization {
                mean: vec![0.0; input],
                scale: vec![1.0; input],
            },
            layer1: Dense::zeros(hidden, input),
            layer2: Dense::zeros(1, hidden),
        }
    }

    /// He-uniform initialization of the weights; biases start at zero.
    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input, hidden);
        let a1 = (6.0 / input as f64).sqrt();
        for w in m.layer1.w.iter_mut().flatten() {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / hidden as f64).sqrt();
        for w in m.layer2.w.iter_mut().flatten() {
            *w = rng.random_range(-a2..a2);
        }
        m
    }

    pub fn num_params(&self) -> usize {
        self.layer1.params().count() + self.layer2.params().count()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layer1.params().chain(self.layer2.params()).copied().collect()
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        self.layer1
            .params_mut()
            .chain(self.layer2.params_mut())
            .nth(idx)
            .expect("parameter index in range")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        let norm = &self.normalization;
        x.iter()
            .zip(&norm.mean)
            .zip(&norm.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Forward pass on a standardized input; fills `hidden`, returns the logit.
    fn forward_z(&self, z: &[f64], hidden: &mut Vec<f64>) -> f64 {
        hidden.clear();
        hidden.extend(
            self.layer1
                .w
                .iter()
                .zip(&self.layer1.b)
                .map(|(row, b)| (dot(row, z) + b).max(0.0)),
        );
        dot(&self.layer2.w[0], hidden) + self.layer2.b[0]
    }

    fn forward(&self, x: &[f64]) -> f64 {
        self.forward_z(&self.standardize(x), &mut Vec::with_capacity(self.dims.hidden))
    }

    /// Accumulate `weight * d(bce)/d(params)` into `grads`; returns the weighted loss.
    fn backward_z(
        &self,
        z: &[f64],
        target: f64,
        weight: f64,
        grads: &mut Gradients,
        hidden: &mut Vec<f64>,
    ) -> f64 {
        let logit = self.forward_z(z, hidden);
        let d_logit = weight * (sigmoid(logit) - target);
        let w2 = &self.layer2.w[0];
        grads.layer2.b[0] += d_logit;
        for (h, (g, &a)) in grads.layer2.w[0].iter_mut().zip(hidden.iter()).enumerate() {
            *g += d_logit * a;
            if a > 0.0 {
                let d_h = d_logit * w2[h];
                grads.layer1.b[h] += d_h;
                for (gw, &zk) in grads.layer1.w[h].iter_mut().zip(z) {
                    *gw += d_h * zk;
                }
            }
        }
        weight * bce_logit(logit, target)
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x))
    }

    /// Success probability for a raw (unstandardized) input vector.
    pub fn predict_input(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?).clamp(PROB_EPS, 1.0 - PROB_EPS))
    }

    pub fn predict_features(&self, train: &[f64], test: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(train.len() + test.len());
        x.extend_from_slice(train);
        x.extend_from_slice(test);
        self.predict_input(&x)
    }

    /// Probability that a skill taught on `train_task` succeeds on `test_task`.
    pub fn predict(&self, train_task: &Task, test_task: &Task) -> Result<f64> {
        self.predict_features(&train_task.features, &test_task.features)
    }

    /// Unregularized cross-entropy of one sample.
    pub fn sample_loss(&self, x: &[f64], target: f64) -> Result<f64> {
        Ok(bce_logit(self.logit(x)?, target))
    }

    /// Analytic gradient of [`Self::sample_loss`].
    pub fn sample_gradient(&self, x: &[f64], target: f64) -> Result<Gradients> {
        self.check_input(x)?;
        let mut g = Gradients::zeros(self.dims);
        self.backward_z(&self.standardize(x), target, 1.0, &mut g, &mut Vec::new());
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::IncompatibleVersion {
                found: self.version,
                expected: MODEL_VERSION,
            });
        }
        let Dims { input, hidden } = self.dims;
        let ok = self.normalization.mean.len() == input
            && self.normalization.scale.len() == input
            && self.layer1.w.len() == hidden
            && self.layer1.w.iter().all(|r| r.len() == input)
            && self.layer1.b.len() == hidden
            && self.layer2.w.len() == 1
            && self.layer2.w[0].len() == hidden
            && self.layer2.b.len() == 1;
        if !ok {
            return Err(Error::Invalid("model shapes disagree with dims".into()));
        }
        let finite = self.params().iter().all(|p| p.is_finite())
            && self.normalization.mean.iter().all(|v| v.is_finite())
            && self.normalization.scale.iter().all(|v| v.is_finite() && *v > 0.0);
        if !finite {
            return Err(Error::Invalid("model parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Invalid("model file has no version".into()))?;
        if version != MODEL_VERSION as u64 {
            return Err(Error::IncompatibleVersion {
                found: version as u32,
                expected: MODEL_VERSION,
            });
        }
        let model: PreconditionModel = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Largest relative disagreement between analytic gradients and central
/// finite differences of the per-sample loss, over every parameter.
///
/// Each entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(model: &PreconditionModel, x: &[f64], target: f64, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let analytic = model.sample_gradient(x, target)?.flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + epsilon;
        let up = probe.sample_loss(x, target)?;
        *probe.param_mut(i) = orig - epsilon;
        let down = probe.sample_loss(x, target)?;
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Area under the ROC curve via the rank statistic, ties averaged.
/// `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_predicted: f64,
    pub observed_rate: f64,
}

/// Reliability table over equal-width probability bins.
pub fn calibration_table(scores: &[f64], labels: &[bool], bins: usize) -> Vec<CalibrationBin> {
    let mut acc = vec![(0usize, 0.0, 0usize); bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += s;
        acc[b].2 += usize::from(l);
    }
    acc.into_iter()
        .enumerate()
        .map(|(b, (count, sum, pos))| CalibrationBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count,
            mean_predicted: if count > 0 { sum / count as f64 } else { 0.0 },
            observed_rate: if count > 0 { pos as f64 / count as f64 } else { 0.0 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows_train: usize,
    pub rows_validation: usize,
    pub positive_rate: f64,
    /// (negative, positive) sample weights.
    pub class_weights: (f64, f64),
    pub single_class: bool,
    /// Per epoch: mean weighted minibatch loss over the pass, plus the weight
    /// penalty at the end of the pass.
    pub loss_history: Vec<f64>,
    /// Weighted loss of the final model on the training rows.
    pub final_train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub validation_auc: Option<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        lr: f64,
    ) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn weight_penalty(model: &PreconditionModel, decay: f64) -> f64 {
    let sq: f64 = model
        .layer1
        .w
        .iter()
        .chain(model.layer2.w.iter())
        .flatten()
        .map(|w| w * w)
        .sum();
    0.5 * decay * sq
}

/// Train on `dataset` with minibatch Adam on weighted cross-entropy plus L2
/// weight decay. Deterministic given `cfg.seed`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(PreconditionModel, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let xs: Vec<Vec<f64>> = dataset.rows.iter().map(|r| r.input()).collect();
    let ys: Vec<bool> = dataset.rows.iter().map(|r| r.label).collect();
    let input = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != input) {
        return Err(Error::DimensionMismatch {
            expected: input,
            actual: bad.len(),
        });
    }

    let mut rng = seed::rng(cfg.seed, &[seed::MODEL]);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if xs.len() < 2 {
        0
    } else {
        ((xs.len() as f64 * cfg.validation_split).round() as usize).clamp(1, xs.len() - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let n = train_idx.len() as f64;
    let mut mean = vec![0.0; input];
    for &i in &train_idx {
        for (m, v) in mean.iter_mut().zip(&xs[i]) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; input];
    for &i in &train_idx {
        for ((s, v), m) in scale.iter_mut().zip(&xs[i]).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }

    let positives = train_idx.iter().filter(|&&i| ys[i]).count();
    let pos_rate = positives as f64 / n;
    let single_class = positives == 0 || positives == train_idx.len();
    if single_class {
        log::warn!("training set has a single class (positive rate {pos_rate})");
    }
    let class_weights = if !single_class && !(0.2..=0.8).contains(&pos_rate) {
        (0.5 / (1.0 - pos_rate), 0.5 / pos_rate)
    } else {
        (1.0, 1.0)
    };
    let weight = |y: bool| if y { class_weights.1 } else { class_weights.0 };

    let mut model = PreconditionModel::random(input, cfg.hidden, &mut rng);
    model.normalization = Normalization { mean, scale };

    let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.standardize(x)).collect();
    let target = |i: usize| f64::from(u8::from(ys[i]));
    let data_loss = |model: &PreconditionModel, idx: &[usize]| -> f64 {
        let mut hidden = Vec::new();
        let total: f64 = idx
            .iter()
            .map(|&i| weight(ys[i]) * bce_logit(model.forward_z(&zs[i], &mut hidden), target(i)))
            .sum();
        total / idx.len() as f64
    };

    let mut adam = Adam::new(model.num_params());
    let mut grads = Gradients::zeros(model.dims);
    let mut hidden = Vec::with_capacity(cfg.hidden);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                epoch_loss +=
                    model.backward_z(&zs[i], target(i), weight(ys[i]), &mut grads, &mut hidden);
            }
            let inv = 1.0 / batch.len() as f64;
            let decay = cfg.weight_decay;
            let g1 = grads
                .layer1
                .w
                .iter()
                .flatten()
                .zip(model.layer1.w.iter().flatten())
                .map(|(g, w)| g * inv + decay * w)
                .chain(grads.layer1.b.iter().map(|g| g * inv));
            let g2 = grads.layer2.w[0]
                .iter()
                .zip(&model.layer2.w[0])
                .map(|(g, w)| g * inv + decay * w)
                .chain(grads.layer2.b.iter().map(|g| g * inv));
            let flat: Vec<f64> = g1.chain(g2).collect();
            adam.step(
                model.layer1.params_mut().chain(model.layer2.params_mut()),
                flat.into_iter(),
                cfg.learning_rate,
            );
        }
        history.push(epoch_loss / n + weight_penalty(&model, cfg.weight_decay));
    }

    let (validation_loss, validation_accuracy, validation_auc) = if val_idx.is_empty() {
        (None, None, None)
    } else {
        let scores: Vec<f64> = val_idx
            .iter()
            .map(|&i| sigmoid(model.forward_z(&zs[i], &mut hidden)))
            .collect();
        let labels: Vec<bool> = val_idx.iter().map(|&i| ys[i]).collect();
        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| (s >= 0.5) == l)
            .count();
        (
            Some(data_loss(&model, val_idx)),
            Some(correct as f64 / labels.len() as f64),
            auc(&scores, &labels),
        )
    };

    let report = TrainReport {
        rows_train: train_idx.len(),
        rows_validation: val_idx.len(),
        positive_rate: dataset.positive_rate(),
        class_weights,
        single_class,
        final_train_loss: data_loss(&model, &train_idx) + weight_penalty(&model, cfg.weight_decay),
        loss_history: history,
        validation_loss,
        validation_accuracy,
        validation_auc,
    };
    Ok((model, report))
}
