//! Objective assembly, the optimizer and schedule, the training loop, and
//! test-time prediction and evaluation.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{segment_indices, DatasetConfig, Sample};
use crate::error::{Error, Result};
use crate::localizer::localize;
use crate::model::{Forward, Model, Prepared};
use crate::nn::{ModelDims, Variant};
use crate::params::{Grads, Params};
use crate::tape::{Graph, Var};

/// Mixing constant for per-sample random streams.
const STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(STREAM))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    Compact,
}

impl Profile {
    pub fn dims(self) -> ModelDims {
        match self {
            Profile::Full => ModelDims::full(),
            Profile::Compact => ModelDims::compact(),
        }
    }
}

/// Architecture choice carried alongside the optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_lambda1() -> f64 {
    2.0
}
fn default_lambda2() -> f64 {
    1.0
}
fn default_smoothing() -> f64 {
    0.1
}
fn default_lr0() -> f64 {
    1e-3
}
fn default_decay() -> Vec<usize> {
    vec![60, 90, 110]
}
fn default_epochs() -> usize {
    120
}
fn default_batch() -> usize {
    64
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            smoothing: default_smoothing(),
            lr0: default_lr0(),
            decay_epochs: default_decay(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            model: ModelSection::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        if !(self.lr0 > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr0 and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning rate for 1-based `epoch`: `lr0 * 0.1^|{d : epoch > d}|`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.lr0 * 0.1f64.powi(decays as i32)
    }
}

/// Cross-entropy of `[1, C]` logits against `(1 - eps) * onehot(label) + eps / C`.
pub fn label_smooth_ce(g: &mut Graph, logits: Var, label: usize, eps: f64) -> Var {
    let classes = g.value(logits).ncols();
    let weights = smoothed_target(label, eps, classes).mapv(|q| -q).insert_axis(ndarray::Axis(0));
    let log_p = g.log_softmax_rows(logits);
    g.weighted_sum(log_p, weights)
}

/// The smoothed target distribution.
pub fn smoothed_target(label: usize, eps: f64, classes: usize) -> Array1<f64> {
    assert!(label < classes, "label {label} out of range for {classes} classes");
    let mut q = Array1::from_elem(classes, eps / classes as f64);
    q[label] += 1.0 - eps;
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub l_a1: f64,
    pub l_a2: f64,
    pub l_con: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total = l_a1 + lambda1 * l_a2 + lambda2 * l_con`, evaluated left to right.
    pub fn new(l_a1: f64, l_a2: f64, l_con: f64, lambda1: f64, lambda2: f64) -> Self {
        LossBreakdown {
            l_a1,
            l_a2,
            l_con,
            total: l_a1 + lambda1 * l_a2 + lambda2 * l_con,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [("loss_a1", self.l_a1), ("loss_a2", self.l_a2), ("loss_con", self.l_con), ("loss_total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(name, _)| name)
    }
}

/// Builds the weighted objective on the graph. The graph node holds exactly
/// the same value as the returned breakdown's `total`.
pub fn total_loss(g: &mut Graph, forward: &Forward, label: usize, cfg: &TrainConfig) -> (Var, LossBreakdown) {
    let a1 = label_smooth_ce(g, forward.logits_preliminary, label, cfg.smoothing);
    let (Some(l2), Some(con)) = (forward.logits_final, forward.consistency) else {
        let v = g.scalar(a1);
        return (a1, LossBreakdown { l_a1: v, l_a2: 0.0, l_con: 0.0, total: v });
    };
    let a2 = label_smooth_ce(g, l2, label, cfg.smoothing);
    let weighted_a2 = g.scale(a2, cfg.lambda1);
    let head = g.add(a1, weighted_a2);
    let weighted_con = g.scale(con, cfg.lambda2);
    let total = g.add(head, weighted_con);
    let breakdown = LossBreakdown::new(g.scalar(a1), g.scalar(a2), g.scalar(con), cfg.lambda1, cfg.lambda2);
    (total, breakdown)
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(params: &Params) -> Self {
        let zeros: Vec<_> = params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Grads, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for id in params.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(params.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_a1: f64,
    pub loss_a2: f64,
    pub loss_con: f64,
    pub loss_total: f64,
    pub train_acc: f64,
    /// `None` when the validation split is empty.
    pub val_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,lr,loss_a1,loss_a2,loss_con,loss_total,train_acc,val_acc";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = self.val_acc.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.loss_a1, self.loss_a2, self.loss_con, self.loss_total, self.train_acc, val
        )
    }
}

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Splits `0..n` into (train, validation) with 10% held out, shuffled by `seed`.
pub fn validation_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n / 10;
    let val = idx.split_off(n - held);
    (idx, val)
}

/// Trains `model` in place on a 90% split of `samples`, calling `on_epoch`
/// after each epoch. Deterministic given `cfg.seed`.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    dataset: &DatasetConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut train_idx, val_idx) = validation_split(samples.len(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(&model.params);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        train_idx.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut correct = 0usize;
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut grads = Grads::zeros_like(&model.params);
            for &i in batch {
                let sample = &samples[i];
                let indices = segment_indices(sample.frame_count(), dataset.k, &mut rng);
                let x = Prepared::new(
                    sample,
                    &indices,
                    dataset.reference_joint,
                    Some((&mut rng, dataset.rotation_max_degrees)),
                );
                let mut g = Graph::new(&model.params);
                // A non-finite preliminary distribution is rejected by the
                // localizer before any loss can be inspected.
                let fwd = match model.forward(&mut g, &x) {
                    Err(Error::NotASimplex { .. }) => return Err(Error::Divergence { epoch, term: "loss_a1" }),
                    other => other?,
                };
                let (objective, parts) = total_loss(&mut g, &fwd, x.label, cfg);
                if let Some(term) = parts.non_finite_term() {
                    return Err(Error::Divergence { epoch, term });
                }
                if argmax(&training_probabilities(&g, &fwd)) == x.label {
                    correct += 1;
                }
                grads.accumulate(&g.backward(objective));
                sums.l_a1 += parts.l_a1;
                sums.l_a2 += parts.l_a2;
                sums.l_con += parts.l_con;
                sums.total += parts.total;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch, term: "gradient" });
            }
            adam.step(&mut model.params, &grads, lr);
        }
        let n = train_idx.len().max(1) as f64;
        let val_acc = if val_idx.is_empty() {
            None
        } else {
            let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
            Some(evaluate(model, &val, dataset, 1, cfg.seed ^ epoch as u64)?.top1_accuracy)
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss_a1: sums.l_a1 / n,
            loss_a2: sums.l_a2 / n,
            loss_con: sums.l_con / n,
            loss_total: sums.total / n,
            train_acc: correct as f64 / n,
            val_acc,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}

fn training_probabilities(g: &Graph, fwd: &Forward) -> Array1<f64> {
    match fwd.logits_final {
        Some(l2) => (&fwd.action_probs + &crate::tape::softmax_rows(g.value(l2)).row(0)) * 0.5,
        None => fwd.action_probs.clone(),
    }
}

fn argmax(p: &Array1<f64>) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// One sampled view kept by [`predict`].
#[derive(Debug, Clone)]
pub struct PredictedView {
    pub frame_indices: Vec<usize>,
    pub attention: Option<Array2<f64>>,
    pub pooled: Option<Array2<f64>>,
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Mean over views of the per-view class distribution.
    pub probabilities: Array1<f64>,
    pub views: Vec<PredictedView>,
}

impl Prediction {
    pub fn label(&self) -> usize {
        argmax(&self.probabilities)
    }
}

/// Test-time protocol: `repeats` random frame samplings, no augmentation,
/// class probabilities averaged.
pub fn predict(
    model: &Model,
    sample: &Sample,
    dataset: &DatasetConfig,
    repeats: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Prediction> {
    let repeats = repeats.max(1);
    let mut probabilities = Array1::zeros(model.config.classes);
    let mut views = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let indices = segment_indices(sample.frame_count(), dataset.k, rng);
        let x = Prepared::new::<ChaCha8Rng>(sample, &indices, dataset.reference_joint, None);
        let out = model.view(&x)?;
        probabilities += &out.probabilities;
        views.push(PredictedView {
            frame_indices: indices,
            attention: out.attention,
            pooled: out.pooled,
            consistency: out.consistency,
        });
    }
    probabilities /= repeats as f64;
    Ok(Prediction { probabilities, views })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub samples: usize,
    pub top1_accuracy: f64,
    /// Present when the data carries interacted-object ground truth and the
    /// model localizes.
    pub localization_frame_accuracy: Option<f64>,
    pub mean_consistency: Option<f64>,
}

/// Top-1 accuracy over [`predict`], frame-level localization accuracy over
/// every sampled frame whose true object was detected, and the mean
/// consistency loss over all views. Sample `i` draws from its own stream of
/// `seed`.
pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    dataset: &DatasetConfig,
    repeats: usize,
    seed: u64,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let (mut loc_hits, mut loc_frames) = (0usize, 0usize);
    let (mut con_sum, mut con_count) = (0.0, 0usize);
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = sample_rng(seed, i as u64);
        let pred = predict(model, sample, dataset, repeats, &mut rng)?;
        if pred.label() == sample.action_label {
            correct += 1;
        }
        for view in &pred.views {
            if let Some(c) = view.consistency {
                con_sum += c;
                con_count += 1;
            }
            let (Some(pooled), Some(gt)) = (&view.pooled, &sample.gt_object) else {
                continue;
            };
            let cands = sample.candidates.select_frames(&view.frame_indices);
            let picks = localize(pooled, &cands, dataset.categories);
            for ((pick, &t), frame) in picks.iter().zip(&view.frame_indices).zip(&cands.frames) {
                let Some(truth) = gt[t] else { continue };
                loc_frames += 1;
                if frame[pick.slot] == frame[truth] {
                    loc_hits += 1;
                }
            }
        }
    }
    Ok(Metrics {
        samples: samples.len(),
        top1_accuracy: correct as f64 / samples.len() as f64,
        localization_frame_accuracy: (loc_frames > 0).then(|| loc_hits as f64 / loc_frames as f64),
        mean_consistency: (con_count > 0).then(|| con_sum / con_count as f64),
    })
}
