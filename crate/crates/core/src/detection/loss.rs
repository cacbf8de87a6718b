use serde::{Deserialize, Serialize};

use super::DetectionError;
use crate::geometry::BoxMode;

/// Bounds applied to the learnable per-class weights after every update.
pub const CLASS_WEIGHT_MIN: f64 = 0.1;
pub const CLASS_WEIGHT_MAX: f64 = 10.0;
pub const CLASS_WEIGHT_INIT: f64 = 1.0;

/// Loss value with gradients with respect to the confidences and the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsLossGrad {
    pub loss: f64,
    pub d_phi: Vec<f64>,
    pub d_w: Vec<f64>,
}

fn check_cls(phi: &[f64], w: &[f64], t: &[f64]) -> Result<usize, DetectionError> {
    if phi.len() != w.len() || phi.len() != t.len() || phi.is_empty() {
        return Err(DetectionError::Shape(format!("confidences {}, weights {}, target {}", phi.len(), w.len(), t.len())));
    }
    if w.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(DetectionError::Config("class weights must be positive".into()));
    }
    let ones = t.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || t.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(DetectionError::Shape("target is not one-hot".into()));
    }
    Ok(t.iter().position(|&v| v == 1.0).expect("one-hot"))
}

fn weighted_softmax(phi: &[f64], w: &[f64]) -> (Vec<f64>, f64) {
    let psi: Vec<f64> = phi.iter().zip(w).map(|(p, w)| p * w).collect();
    let max = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = psi.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    (psi.iter().map(|v| v - log_z).collect(), log_z)
}

/// Cross-entropy of `softmax(w ⊙ Φ)` against the one-hot target `t`.
pub fn hierarchical_cls_loss(phi: &[f64], w: &[f64], t: &[f64]) -> Result<f64, DetectionError> {
    let c = check_cls(phi, w, t)?;
    let (log_p, _) = weighted_softmax(phi, w);
    Ok((-log_p[c]).max(0.0))
}

/// [`hierarchical_cls_loss`] with `∂/∂Φ = (p − t) ⊙ w` and `∂/∂w = (p − t) ⊙ Φ`.
pub fn hierarchical_cls_loss_grad(phi: &[f64], w: &[f64], t: &[f64]) -> Result<ClsLossGrad, DetectionError> {
    let c = check_cls(phi, w, t)?;
    let (log_p, _) = weighted_softmax(phi, w);
    let delta: Vec<f64> = log_p.iter().zip(t).map(|(lp, t)| lp.exp() - t).collect();
    Ok(ClsLossGrad {
        loss: (-log_p[c]).max(0.0),
        d_phi: delta.iter().zip(w).map(|(d, w)| d * w).collect(),
        d_w: delta.iter().zip(phi).map(|(d, p)| d * p).collect(),
    })
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveSample {
    /// Row of the sample in the layer's confidence matrix.
    pub sample: usize,
    /// Box regression residuals (prediction minus target encoding).
    pub residual: Vec<f64>,
    /// Per-sample regression weight; 1 when no reweighting is used.
    pub reg_weight: f64,
}

/// Samples of one pyramid layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBatch {
    pub layer: usize,
    /// One row of class confidences per sample.
    pub confidences: Vec<Vec<f64>>,
    pub class_weights: Vec<f64>,
    /// True class per sample (one-hot index).
    pub targets: Vec<usize>,
    pub positives: Vec<PositiveSample>,
}

impl LayerBatch {
    pub fn num_samples(&self) -> usize {
        self.confidences.len()
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.class_weights.len()];
        t[self.targets[i]] = 1.0;
        t
    }
}

/// Sum over layers of the mean classification loss plus the mean (optionally
/// weighted) smooth-L1 regression loss over positives. `Obb` applies the
/// regression weights, `Hbb` ignores them.
pub fn detection_total_loss(batches: &[LayerBatch], mode: BoxMode) -> Result<f64, DetectionError> {
    let mut total = 0.0;
    for b in batches {
        if b.targets.len() != b.num_samples() {
            return Err(DetectionError::Shape(format!("layer {}: {} targets for {} samples", b.layer, b.targets.len(), b.num_samples())));
        }
        if b.positives.len() > b.num_samples() {
            return Err(DetectionError::Shape(format!("layer {}: more positives than samples", b.layer)));
        }
        if b.num_samples() == 0 {
            continue;
        }
        let mut cls = 0.0;
        for (i, phi) in b.confidences.iter().enumerate() {
            if b.targets[i] >= b.class_weights.len() {
                return Err(DetectionError::Shape(format!("layer {}: target {} out of range", b.layer, b.targets[i])));
            }
            cls += hierarchical_cls_loss(phi, &b.class_weights, &b.one_hot(i))?;
        }
        total += cls / b.num_samples() as f64;
        if !b.positives.is_empty() {
            let reg: f64 = b
                .positives
                .iter()
                .map(|p| {
                    let l: f64 = p.residual.iter().map(|&r| smooth_l1(r)).sum();
                    match mode {
                        BoxMode::Obb => p.reg_weight * l,
                        BoxMode::Hbb => l,
                    }
                })
                .sum();
            total += reg / b.positives.len() as f64;
        }
    }
    Ok(total)
}

/// Gradient step on class weights followed by the clamp.
pub fn update_class_weights(w: &mut [f64], grad: &[f64], learning_rate: f64) {
    for (w, g) in w.iter_mut().zip(grad) {
        *w = (*w - learning_rate * g).clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn uniform_two_class() {
        let l = hierarchical_cls_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < EPS);
    }

    #[test]
    fn uniform_three_class() {
        for c in 0..3 {
            let mut t = [0.0; 3];
            t[c] = 1.0;
            let l = hierarchical_cls_loss(&[0.5, 1.0, 0.25], &[2.0, 1.0, 4.0], &t).unwrap();
            assert!((l - 3f64.ln()).abs() < EPS);
        }
    }

    #[test]
    fn weighted_two_class_by_hand() {
        let l = hierarchical_cls_loss(&[1.0, 1.0], &[2.0, 1.0], &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((l - (-(e * e / (e * e + e)).ln())).abs() < EPS);
        assert!((l - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(hierarchical_cls_loss(&[1.0], &[1.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(hierarchical_cls_loss(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(hierarchical_cls_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    fn batch(positives: Vec<PositiveSample>) -> LayerBatch {
        LayerBatch {
            layer: 1,
            confidences: vec![vec![1.0, 1.0]],
            class_weights: vec![1.0, 1.0],
            targets: vec![0],
            positives,
        }
    }

    #[test]
    fn classification_only_layer() {
        let l = detection_total_loss(&[batch(vec![])], BoxMode::Obb).unwrap();
        assert!((l - 2f64.ln()).abs() < EPS);
    }

    #[test]
    fn regression_below_the_knee() {
        let p = PositiveSample { sample: 0, residual: vec![0.5; 5], reg_weight: 1.0 };
        let l = detection_total_loss(&[batch(vec![p])], BoxMode::Obb).unwrap();
        assert!((l - 2f64.ln() - 5.0 * 0.125).abs() < EPS);
    }

    #[test]
    fn regression_weight_only_counts_for_obb() {
        let p = PositiveSample { sample: 0, residual: vec![0.5; 4], reg_weight: 2.0 };
        let obb = detection_total_loss(&[batch(vec![p.clone()])], BoxMode::Obb).unwrap();
        let hbb = detection_total_loss(&[batch(vec![p])], BoxMode::Hbb).unwrap();
        assert!((obb - 2f64.ln() - 2.0 * 4.0 * 0.125).abs() < EPS);
        assert!((hbb - 2f64.ln() - 4.0 * 0.125).abs() < EPS);
    }

    #[test]
    fn smooth_l1_is_continuous_at_the_knee() {
        assert!((smooth_l1(1.0 - 1e-12) - smooth_l1(1.0 + 1e-12)).abs() < 1e-11);
        assert_eq!(smooth_l1(3.0), 2.5);
    }

    #[test]
    fn class_weights_are_clamped() {
        let mut w = vec![1.0, 1.0];
        update_class_weights(&mut w, &[100.0, -100.0], 1.0);
        assert_eq!(w, vec![CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX]);
    }
}
