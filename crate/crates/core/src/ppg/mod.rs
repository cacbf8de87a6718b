//! Pair proposal: two adversarially trained autoencoders fitted to annotated
//! object pairs only. Pairs they reconstruct well rank high.

mod features;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::nn::{Activation, Adam, AdamConfig, Bound, Mlp, ParamSet};

pub use features::{pair_feature_dim, pair_feature_matrix, pair_feature_x, Standardizer};

pub const PED1_ENCODER: &str = "e1";
pub const PED1_DECODER: &str = "d1";
pub const PED2_ENCODER: &str = "e2";
pub const PED2_DECODER: &str = "d2";

#[derive(Debug, thiserror::Error)]
pub enum PpgError {
    #[error("feature dimension {got} does not match the model's {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("iteration index must be at least 1")]
    BadIteration,
    #[error("training diverged: loss is {0}")]
    Diverged(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpgArch {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
    pub activation: Activation,
}

impl PpgArch {
    /// Default shape for `input`-dimensional features: latent `input / 4`.
    pub fn for_input(input: usize) -> Self {
        Self { input, hidden: (input / 2).max(2), latent: (input / 4).max(1), activation: Activation::Tanh }
    }

    fn encoder(&self, prefix: &str) -> Mlp {
        Mlp::new(prefix, &[self.input, self.hidden, self.latent], self.activation, Activation::Identity)
    }

    fn decoder(&self, prefix: &str) -> Mlp {
        Mlp::new(prefix, &[self.latent, self.hidden, self.input], self.activation, Activation::Identity)
    }
}

/// `PED₁ = D₁∘E₁`, `PED₂ = D₂∘E₂`; `iteration` is the schedule index `n ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgModel {
    pub arch: PpgArch,
    pub params: ParamSet,
    pub iteration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: (u32, u32),
    pub score: f64,
}

/// Weights `(1/n, 1 − 1/n)` of the two reconstruction terms.
pub fn schedule_weights(n: u64) -> (f64, f64) {
    let a = 1.0 / n as f64;
    (a, 1.0 - a)
}

fn row_norm_mean(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let n = tape.row_norms(d);
    tape.mean(n)
}

fn plain_row_norm_mean(a: &Mat, b: &Mat) -> f64 {
    let d = a - b;
    d.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / d.nrows().max(1) as f64
}

impl PpgModel {
    pub fn new(arch: PpgArch, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        arch.encoder(PED1_ENCODER).init(&mut params, rng);
        arch.decoder(PED1_DECODER).init(&mut params, rng);
        arch.encoder(PED2_ENCODER).init(&mut params, rng);
        arch.decoder(PED2_DECODER).init(&mut params, rng);
        Self { arch, params, iteration: 1 }
    }

    /// Square identity maps with linear activations: both reconstructions
    /// return their input exactly.
    pub fn identity(dim: usize) -> Self {
        let arch = PpgArch { input: dim, hidden: dim, latent: dim, activation: Activation::Identity };
        let mut params = ParamSet::new();
        for prefix in [PED1_ENCODER, PED1_DECODER, PED2_ENCODER, PED2_DECODER] {
            for layer in 0..2 {
                params.insert(format!("{prefix}.{layer}.w"), Mat::eye(dim));
                params.insert(format!("{prefix}.{layer}.b"), Mat::zeros((1, dim)));
            }
        }
        Self { arch, params, iteration: 1 }
    }

    fn check(&self, x: &Mat) -> Result<(), PpgError> {
        if x.ncols() != self.arch.input {
            return Err(PpgError::Dimension { expected: self.arch.input, got: x.ncols() });
        }
        Ok(())
    }

    pub fn ped1(&self, x: &Mat) -> Mat {
        let z = self.arch.encoder(PED1_ENCODER).apply(&self.params, x);
        self.arch.decoder(PED1_DECODER).apply(&self.params, &z)
    }

    pub fn ped2(&self, x: &Mat) -> Mat {
        let z = self.arch.encoder(PED2_ENCODER).apply(&self.params, x);
        self.arch.decoder(PED2_DECODER).apply(&self.params, &z)
    }

    fn ped_tape(&self, tape: &mut Tape, bound: &Bound, x: Var, second: bool) -> Var {
        let (e, d) = if second { (PED2_ENCODER, PED2_DECODER) } else { (PED1_ENCODER, PED1_DECODER) };
        let z = self.arch.encoder(e).forward(tape, bound, x);
        self.arch.decoder(d).forward(tape, bound, z)
    }

    /// `ℒ_PED` at schedule index `n` on the tape, differentiable in every
    /// parameter bound in `bound`. Also returns the `X¹` node.
    pub fn ped_loss_tape(&self, tape: &mut Tape, bound: &Bound, x: Var, n: u64) -> (Var, Var) {
        let (a, b) = schedule_weights(n);
        let x1 = self.ped_tape(tape, bound, x, false);
        let x2 = self.ped_tape(tape, bound, x1, true);
        let r1 = row_norm_mean(tape, x, x1);
        let r2 = row_norm_mean(tape, x, x2);
        let t1 = tape.scale(r1, a);
        let t2 = tape.scale(r2, b);
        (tape.add(t1, t2), x1)
    }

    /// `ℒ_PED = (1/n)·mean‖X − X¹‖ + (1 − 1/n)·mean‖X − X²‖`.
    pub fn ped_loss(&self, x: &Mat, n: u64) -> Result<f64, PpgError> {
        if n == 0 {
            return Err(PpgError::BadIteration);
        }
        let (x1, x2) = ped_forward(self, x)?;
        let (a, b) = schedule_weights(n);
        Ok(a * plain_row_norm_mean(x, &x1) + b * plain_row_norm_mean(x, &x2))
    }
}

/// `(X¹, X²) = (PED₁(X), PED₂(X¹))`, row-wise.
pub fn ped_forward(model: &PpgModel, x: &Mat) -> Result<(Mat, Mat), PpgError> {
    model.check(x)?;
    let x1 = model.ped1(x);
    let x2 = model.ped2(&x1);
    Ok((x1, x2))
}

/// Model plus the two optimisers of the alternating updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgTrainer {
    pub model: PpgModel,
    pub opt_ped1: Adam,
    pub opt_ped2: Adam,
}

impl PpgTrainer {
    pub fn new(model: PpgModel, adam: AdamConfig) -> Self {
        Self { model, opt_ped1: Adam::new(adam), opt_ped2: Adam::new(adam) }
    }
}

/// One alternating update on a batch of annotated-pair features at schedule
/// index `n`. PED₁ descends `ℒ_PED`; PED₂ descends
/// `(1/n)·mean‖X − PED₂(X)‖ − (1 − 1/n)·mean‖X − PED₂(X¹)‖` with `X¹` held
/// fixed. Returns `ℒ_PED` before the updates.
pub fn ppg_training_step(trainer: &mut PpgTrainer, batch: &Mat, n: u64) -> Result<f64, PpgError> {
    if batch.nrows() == 0 {
        return Err(PpgError::EmptyBatch);
    }
    if n == 0 {
        return Err(PpgError::BadIteration);
    }
    trainer.model.check(batch)?;
    let (a, b) = schedule_weights(n);

    // PED₁ step: every parameter is bound, only PED₁'s gradients are kept.
    let mut tape = Tape::new();
    let bound = trainer.model.params.bind(&mut tape);
    let x = tape.constant(batch.clone());
    let (loss, x1) = trainer.model.ped_loss_tape(&mut tape, &bound, x, n);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(PpgError::Diverged(value));
    }
    let g = tape.backward(loss);
    let grads1: BTreeMap<String, Mat> = bound
        .grads(&tape, &g)
        .into_iter()
        .filter(|(k, _)| k.starts_with(PED1_ENCODER) || k.starts_with(PED1_DECODER))
        .collect();
    let x1 = tape.value(x1).clone();

    // PED₂ step on true X and on the detached PED₁ reconstruction.
    let mut tape = Tape::new();
    let mut ped2 = trainer.model.params.subset(PED2_ENCODER);
    ped2.merge(trainer.model.params.subset(PED2_DECODER));
    let b2 = ped2.bind(&mut tape);
    let x = tape.constant(batch.clone());
    let x1v = tape.constant(x1);
    let rx = trainer.model.ped_tape(&mut tape, &b2, x, true);
    let rx1 = trainer.model.ped_tape(&mut tape, &b2, x1v, true);
    let own = row_norm_mean(&mut tape, x, rx);
    let fooled = row_norm_mean(&mut tape, x, rx1);
    let own = tape.scale(own, a);
    let fooled = tape.scale(fooled, b);
    let loss2 = tape.sub(own, fooled);
    if !tape.scalar(loss2).is_finite() {
        return Err(PpgError::Diverged(tape.scalar(loss2)));
    }
    let g = tape.backward(loss2);
    let grads2 = b2.grads(&tape, &g);

    trainer.opt_ped1.update(&mut trainer.model.params, &grads1);
    trainer.opt_ped2.update(&mut trainer.model.params, &grads2);
    trainer.model.iteration = n;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpgTrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PpgTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() } }
    }
}

/// Trains from epoch `trainer.model.iteration` (or 1 for a fresh model) up to
/// `cfg.epochs` on annotated-pair features only. `epoch_rng(n)` supplies the
/// shuffling stream of epoch `n`. Returns the mean loss per epoch.
pub fn train_ppg<R: Rng>(
    trainer: &mut PpgTrainer,
    positives: &Mat,
    cfg: &PpgTrainConfig,
    start_epoch: u64,
    mut epoch_rng: impl FnMut(u64) -> R,
) -> Result<Vec<f64>, PpgError> {
    if positives.nrows() == 0 {
        return Err(PpgError::EmptyBatch);
    }
    let mut history = Vec::new();
    for n in start_epoch.max(1)..=cfg.epochs {
        let mut rng = epoch_rng(n);
        let mut order: Vec<usize> = (0..positives.nrows()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = positives.select(Axis(0), chunk);
            total += ppg_training_step(trainer, &batch, n)?;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// Ranking score `−(0.5‖X − X¹‖ + 0.5‖X − X²‖)` for each candidate row.
pub fn score_rows(model: &PpgModel, x: &Mat) -> Result<Vec<f64>, PpgError> {
    let (x1, x2) = ped_forward(model, x)?;
    Ok((0..x.nrows())
        .map(|i| {
            let e1 = (&x.row(i) - &x1.row(i)).mapv(|v| v * v).sum().sqrt();
            let e2 = (&x.row(i) - &x2.row(i)).mapv(|v| v * v).sum().sqrt();
            -(0.5 * e1 + 0.5 * e2)
        })
        .collect())
}

/// One score per candidate, in candidate order.
pub fn score_pairs(model: &PpgModel, candidates: &[((u32, u32), Vec<f64>)]) -> Result<Vec<PairScore>, PpgError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let x = Mat::from_shape_fn((candidates.len(), model.arch.input), |(i, j)| {
        candidates[i].1.get(j).copied().unwrap_or(f64::NAN)
    });
    if let Some(c) = candidates.iter().find(|c| c.1.len() != model.arch.input) {
        return Err(PpgError::Dimension { expected: model.arch.input, got: c.1.len() });
    }
    let s = score_rows(model, &x)?;
    Ok(candidates.iter().zip(s).map(|(c, score)| PairScore { pair: c.0, score }).collect())
}

/// Descending score, ties by `(subject_id, object_id)`.
pub fn pair_score_order(a: &PairScore, b: &PairScore) -> Ordering {
    b.score.total_cmp(&a.score).then(a.pair.cmp(&b.pair))
}

/// The `k1` best pairs in rank order; all of them if fewer.
pub fn select_top_k(scores: &[PairScore], k1: usize) -> Vec<(u32, u32)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(pair_score_order);
    sorted.into_iter().take(k1).map(|s| s.pair).collect()
}

/// Probability that a random positive outscores a random negative; ties
/// count one half.
pub fn ranking_auc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for p in positive {
        for q in negative {
            wins += match p.partial_cmp(q) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    wins / (positive.len() * negative.len()) as f64
}
