use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LayerBatch, PositiveSample, CLASS_WEIGHT_INIT, CLASS_WEIGHT_MAX, CLASS_WEIGHT_MIN};
use crate::autodiff::{Mat, Tape, Var};
use crate::geometry::BoxMode;
use crate::nn::{Activation, Adam, Dense, ParamSet};

/// Anything that turns per-candidate features into class confidences and box
/// regressions.
pub trait Detector {
    fn num_classes(&self) -> usize;

    /// Returns raw confidences `Φ` (`n × C`), class probabilities after the
    /// layer's weighting (`n × C`) and regressions (`n × R`). `layers` holds the
    /// 1-based pyramid layer of each row.
    fn score(&self, features: &Mat, layers: &[usize]) -> (Mat, Mat, Mat);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub regression: usize,
    pub layers: usize,
}

/// Two-layer network: a shared tanh layer, then a linear confidence head and a
/// linear regression head. Per-layer class weights live in `cls_weight`
/// (`layers × classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct TinyScorer {
    pub config: ScorerConfig,
    pub params: ParamSet,
}

/// One training sample for [`TinyScorer::train_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerBatch {
    pub features: Mat,
    pub layers: Vec<usize>,
    pub targets: Vec<usize>,
    /// Regression targets (`n × R`); only rows listed in `positives` count.
    pub reg_targets: Mat,
    /// `(row, regression weight)` of every positive sample.
    pub positives: Vec<(usize, f64)>,
}

pub const CLASS_WEIGHT_PARAM: &str = "cls_weight";

impl TinyScorer {
    fn trunk(&self) -> Dense {
        Dense { prefix: "trunk".into(), input: self.config.input, output: self.config.hidden, activation: Activation::Tanh }
    }

    fn cls_head(&self) -> Dense {
        Dense { prefix: "cls".into(), input: self.config.hidden, output: self.config.classes, activation: Activation::Identity }
    }

    fn reg_head(&self) -> Dense {
        Dense { prefix: "reg".into(), input: self.config.hidden, output: self.config.regression, activation: Activation::Identity }
    }

    pub fn new(config: ScorerConfig, rng: &mut impl Rng) -> Self {
        let mut s = Self { config, params: ParamSet::new() };
        let mut params = ParamSet::new();
        for d in [s.trunk(), s.cls_head(), s.reg_head()] {
            d.init(&mut params, rng);
        }
        params.insert(CLASS_WEIGHT_PARAM, Mat::from_elem((config.layers, config.classes), CLASS_WEIGHT_INIT));
        s.params = params;
        s
    }

    pub fn class_weights(&self) -> &Mat {
        self.params.get(CLASS_WEIGHT_PARAM).expect("class weights")
    }

    /// Splits a forward pass into per-layer loss batches, so the training
    /// objective can be checked against [`super::detection_total_loss`].
    pub fn layer_batches(&self, batch: &ScorerBatch) -> Vec<LayerBatch> {
        let (phi, _, reg) = self.score(&batch.features, &batch.layers);
        let w = self.class_weights();
        (1..=self.config.layers)
            .map(|m| {
                let rows: Vec<usize> = (0..batch.layers.len()).filter(|&i| batch.layers[i] == m).collect();
                let positives = batch
                    .positives
                    .iter()
                    .filter(|(i, _)| batch.layers[*i] == m)
                    .map(|&(i, rw)| PositiveSample {
                        sample: rows.iter().position(|&r| r == i).expect("positive row in layer"),
                        residual: (0..self.config.regression).map(|k| reg[[i, k]] - batch.reg_targets[[i, k]]).collect(),
                        reg_weight: rw,
                    })
                    .collect();
                LayerBatch {
                    layer: m,
                    confidences: rows.iter().map(|&i| phi.row(i).to_vec()).collect(),
                    class_weights: w.row(m - 1).to_vec(),
                    targets: rows.iter().map(|&i| batch.targets[i]).collect(),
                    positives,
                }
            })
            .collect()
    }

    /// One optimiser step on the multi-layer detection objective; returns the
    /// loss before the update. Class weights are clamped afterwards.
    pub fn train_step(&mut self, opt: &mut Adam, batch: &ScorerBatch, mode: BoxMode) -> f64 {
        let n = batch.features.nrows();
        let m = self.config.layers;
        let mut counts = vec![0usize; m + 1];
        let mut pos_counts = vec![0usize; m + 1];
        for &l in &batch.layers {
            counts[l] += 1;
        }
        for &(i, _) in &batch.positives {
            pos_counts[batch.layers[i]] += 1;
        }

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(batch.features.clone());
        let h = self.trunk().forward(&mut tape, &bound, x);
        let phi = self.cls_head().forward(&mut tape, &bound, h);
        let layer_rows: Vec<usize> = batch.layers.iter().map(|l| l - 1).collect();
        let w = tape.gather_rows(bound.var(CLASS_WEIGHT_PARAM), layer_rows);
        let psi = tape.mul(phi, w);
        let logp = tape.log_softmax(psi);
        let picked = tape.pick(logp, batch.targets.clone());
        let cls_scale = Mat::from_shape_fn((n, 1), |(i, _)| -1.0 / counts[batch.layers[i]] as f64);
        let cls_scale = tape.constant(cls_scale);
        let cls = tape.mul_col(picked, cls_scale);
        let mut loss = tape.sum(cls);

        if !batch.positives.is_empty() {
            let rows: Vec<usize> = batch.positives.iter().map(|p| p.0).collect();
            let reg = self.reg_head().forward(&mut tape, &bound, h);
            let pred = tape.gather_rows(reg, rows.clone());
            let target = tape.constant(batch.reg_targets.select(ndarray::Axis(0), &rows));
            let r = tape.sub(pred, target);
            // smooth-L1 = 0.5·min(|r|,1)² + (|r| − min(|r|,1)), written with
            // ops whose gradients match the piecewise form.
            let sq = tape.square(r);
            let abs = tape.sqrt(sq);
            let clipped = self.clip_unit(&mut tape, abs);
            let c2 = tape.square(clipped);
            let quad = tape.scale(c2, 0.5);
            let lin = tape.sub(abs, clipped);
            let per = tape.add(quad, lin);
            let per = tape.sum_cols(per);
            let weights = Mat::from_shape_fn((rows.len(), 1), |(k, _)| {
                let (i, rw) = batch.positives[k];
                let rw = if mode == BoxMode::Obb { rw } else { 1.0 };
                rw / pos_counts[batch.layers[i]] as f64
            });
            let weights = tape.constant(weights);
            let per = tape.mul_col(per, weights);
            let reg_loss = tape.sum(per);
            loss = tape.add(loss, reg_loss);
        }

        let value = tape.scalar(loss);
        let grads = tape.backward(loss);
        opt.update(&mut self.params, &bound.grads(&tape, &grads));
        if let Some(w) = self.params.get_mut(CLASS_WEIGHT_PARAM) {
            w.mapv_inplace(|v| v.clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX));
        }
        value
    }

    /// `min(x, 1)` for non-negative `x`, as `x − relu(x − 1)`.
    fn clip_unit(&self, tape: &mut Tape, x: Var) -> Var {
        let shifted = tape.add_scalar(x, -1.0);
        let over = tape.relu(shifted);
        tape.sub(x, over)
    }
}

impl Detector for TinyScorer {
    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn score(&self, features: &Mat, layers: &[usize]) -> (Mat, Mat, Mat) {
        let h = self.trunk().apply(&self.params, features);
        let phi = self.cls_head().apply(&self.params, &h);
        let reg = self.reg_head().apply(&self.params, &h);
        let w = self.class_weights();
        let mut probs = phi.clone();
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let wr = w.row(layers[i] - 1);
            row.zip_mut_with(&wr, |p, w| *p *= w);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        (phi, probs, reg)
    }
}
