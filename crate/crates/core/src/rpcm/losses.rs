use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::RpcmError;
use crate::autodiff::{Mat, Tape, Var};

/// How the prototype-distance hinge combines its `k` selected pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Selected pairs for the distance hinge; `None` means `min(5, n(n−1))`
    /// for `n` prototypes.
    pub k: Option<usize>,
    pub pd_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, gamma1: 1.0, gamma2: 1.0, k: None, pd_reduction: Reduction::Mean }
    }
}

impl LossConfig {
    pub fn validate(&self, prototypes: usize) -> Result<usize, RpcmError> {
        if !(self.tau > 0.0) {
            return Err(RpcmError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(RpcmError::Config("margins must be non-negative".into()));
        }
        let pairs = prototypes * prototypes.saturating_sub(1);
        let k = self.k.unwrap_or(pairs.min(5));
        if k == 0 || k > pairs {
            return Err(RpcmError::Config(format!("k = {k} outside 1..={pairs}")));
        }
        Ok(k)
    }
}

/// Tape handles of the four loss terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub ic: Var,
    pub id: Var,
    pub pc: Var,
    pub pd: Var,
    pub total: Var,
}

/// Scalar values of the four loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub ic: f64,
    pub id: f64,
    pub pc: f64,
    pub pd: f64,
    pub total: f64,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossParts {
        LossParts {
            ic: tape.scalar(self.ic),
            id: tape.scalar(self.id),
            pc: tape.scalar(self.pc),
            pd: tape.scalar(self.pd),
            total: tape.scalar(self.total),
        }
    }
}

/// Mean over samples of `−log softmax(⟨r̄, p̄ᵢ⟩ / τ)[label]`.
pub fn ic_loss_tape(tape: &mut Tape, r_bar: Var, p_bar: Var, labels: &[usize], tau: f64) -> Var {
    let pt = tape.transpose(p_bar);
    let s = tape.matmul(r_bar, pt);
    let s = tape.scale(s, 1.0 / tau);
    let logp = tape.log_softmax(s);
    let picked = tape.pick(logp, labels.to_vec());
    let m = tape.mean(picked);
    tape.scale(m, -1.0)
}

/// Index of the hardest negative of every sample: the sample of another
/// label closest to this sample's true prototype, ties to the lower index.
pub fn hard_negatives(r_bar: &Mat, p_bar: &Mat, labels: &[usize]) -> Vec<Option<usize>> {
    let dist = |j: usize, c: usize| -> f64 { r_bar.row(j).iter().zip(p_bar.row(c)).map(|(a, b)| (a - b) * (a - b)).sum() };
    labels
        .iter()
        .map(|&y| {
            (0..labels.len())
                .filter(|&j| labels[j] != y)
                .map(|j| (dist(j, y), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, j)| j)
        })
        .collect()
}

/// Mean over samples with a negative of `max(0, q⁺ − q⁻ + γ₁)`, where
/// `q⁺ = ‖r̄ − p̄_y‖²` and `q⁻` is the hardest negative's squared distance to
/// the same prototype. Zero when no sample has a negative.
pub fn id_loss_tape(tape: &mut Tape, r_bar: Var, p_bar: Var, labels: &[usize], gamma1: f64) -> Var {
    let negs = hard_negatives(tape.value(r_bar), tape.value(p_bar), labels);
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| negs[i].is_some()).collect();
    if rows.is_empty() {
        return tape.constant(Mat::zeros((1, 1)));
    }
    let ys: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    let neg_rows: Vec<usize> = rows.iter().map(|&i| negs[i].expect("filtered")).collect();
    let proto = tape.gather_rows(p_bar, ys);
    let pos = tape.gather_rows(r_bar, rows);
    let neg = tape.gather_rows(r_bar, neg_rows);
    let dp = tape.sub(pos, proto);
    let dp = tape.square(dp);
    let q_pos = tape.sum_cols(dp);
    let dn = tape.sub(neg, proto);
    let dn = tape.square(dn);
    let q_neg = tape.sum_cols(dn);
    let margin = tape.sub(q_pos, q_neg);
    let margin = tape.add_scalar(margin, gamma1);
    let hinge = tape.relu(margin);
    tape.mean(hinge)
}

/// `‖p̄ p̄ᵀ‖₂,₁`: the sum of the row norms of the cosine matrix, diagonal
/// included.
pub fn pc_loss_tape(tape: &mut Tape, p_bar: Var) -> Var {
    let pt = tape.transpose(p_bar);
    let g = tape.matmul(p_bar, pt);
    let norms = tape.row_norms(g);
    tape.sum(norms)
}

/// The `k` smallest off-diagonal squared distances of the rows of `p_bar`,
/// as `(i, j)` over ordered pairs, ties broken by `(i, j)`.
pub fn smallest_pairs(p_bar: &Mat, k: usize) -> Vec<(usize, usize)> {
    let n = p_bar.nrows();
    let mut all = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d: f64 = p_bar.row(i).iter().zip(p_bar.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                all.push((d, i, j));
            }
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    all.into_iter().take(k).map(|(_, i, j)| (i, j)).collect()
}

/// `max(0, γ₂ − d)` over the `k` smallest off-diagonal squared distances.
pub fn pd_loss_tape(tape: &mut Tape, p_bar: Var, gamma2: f64, k: usize, reduction: Reduction) -> Var {
    let pairs = smallest_pairs(tape.value(p_bar), k);
    let is: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let js: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let a = tape.gather_rows(p_bar, is);
    let b = tape.gather_rows(p_bar, js);
    let diff = tape.sub(a, b);
    let sq = tape.square(diff);
    let d = tape.sum_cols(sq);
    let neg = tape.scale(d, -1.0);
    let margin = tape.add_scalar(neg, gamma2);
    let hinge = tape.relu(margin);
    match reduction {
        Reduction::Mean => tape.mean(hinge),
        Reduction::Sum => tape.sum(hinge),
    }
}

/// All four terms on raw joint-space vectors `r` (samples) and `p`
/// (prototypes); both are row-normalised first.
pub fn rpcm_loss_tape(tape: &mut Tape, r: Var, p: Var, labels: &[usize], cfg: &LossConfig) -> Result<LossVars, RpcmError> {
    let n = tape.value(p).nrows();
    let k = cfg.validate(n)?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(RpcmError::Label(bad));
    }
    if tape.value(r).nrows() != labels.len() {
        return Err(RpcmError::Shape(format!("{} samples for {} labels", tape.value(r).nrows(), labels.len())));
    }
    check_nonzero(tape.value(r))?;
    check_nonzero(tape.value(p))?;
    let r_bar = tape.normalize_rows(r);
    let p_bar = tape.normalize_rows(p);
    let ic = ic_loss_tape(tape, r_bar, p_bar, labels, cfg.tau);
    let id = id_loss_tape(tape, r_bar, p_bar, labels, cfg.gamma1);
    let pc = pc_loss_tape(tape, p_bar);
    let pd = pd_loss_tape(tape, p_bar, cfg.gamma2, k, cfg.pd_reduction);
    let total = tape.add(ic, id);
    let total = tape.add(total, pc);
    let total = tape.add(total, pd);
    Ok(LossVars { ic, id, pc, pd, total })
}

pub fn check_nonzero(m: &Mat) -> Result<(), RpcmError> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(RpcmError::ZeroVector(i));
        }
    }
    Ok(())
}

/// Rows scaled to unit L2 norm; zero rows are an error.
pub fn normalize(m: &Mat) -> Result<Mat, RpcmError> {
    check_nonzero(m)?;
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

fn unary(r_bar: &Mat, p_bar: &Mat, f: impl FnOnce(&mut Tape, Var, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let r = tape.constant(r_bar.clone());
    let p = tape.constant(p_bar.clone());
    let v = f(&mut tape, r, p);
    tape.scalar(v)
}

/// Instance contrastive term on already normalised inputs.
pub fn loss_instance_contrastive(r_bar: &Mat, p_bar: &Mat, labels: &[usize], tau: f64) -> f64 {
    unary(r_bar, p_bar, |t, r, p| ic_loss_tape(t, r, p, labels, tau))
}

/// `max(0, q⁺ − q⁻ + γ₁)` for a single sample.
pub fn loss_instance_distance(q_pos: f64, q_neg: f64, gamma1: f64) -> f64 {
    (q_pos - q_neg + gamma1).max(0.0)
}

/// Batch version with hard negatives mined from `labels`.
pub fn loss_instance_distance_batch(r_bar: &Mat, p_bar: &Mat, labels: &[usize], gamma1: f64) -> f64 {
    unary(r_bar, p_bar, |t, r, p| id_loss_tape(t, r, p, labels, gamma1))
}

pub fn loss_prototype_contrast(p_bar: &Mat) -> f64 {
    unary(&Mat::zeros((0, p_bar.ncols())), p_bar, |t, _, p| pc_loss_tape(t, p))
}

pub fn loss_prototype_distance(p_bar: &Mat, k: usize, gamma2: f64, reduction: Reduction) -> f64 {
    unary(&Mat::zeros((0, p_bar.ncols())), p_bar, |t, _, p| pd_loss_tape(t, p, gamma2, k, reduction))
}

/// Unweighted sum of the four terms.
pub fn rpcm_total_loss(ic: f64, id: f64, pc: f64, pd: f64) -> f64 {
    ic + id + pc + pd
}

/// Which loss [`loss_and_gradients`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    InstanceContrastive,
    InstanceDistance,
    PrototypeContrast,
    PrototypeDistance,
    Total,
}

/// Value of one term on raw `r`, `p`, with its gradients w.r.t. both.
pub fn loss_and_gradients(term: LossTerm, r: &Mat, p: &Mat, labels: &[usize], cfg: &LossConfig) -> Result<(f64, Mat, Mat), RpcmError> {
    let mut tape = Tape::new();
    let rv = tape.leaf(r.clone());
    let pv = tape.leaf(p.clone());
    let parts = rpcm_loss_tape(&mut tape, rv, pv, labels, cfg)?;
    let out = match term {
        LossTerm::InstanceContrastive => parts.ic,
        LossTerm::InstanceDistance => parts.id,
        LossTerm::PrototypeContrast => parts.pc,
        LossTerm::PrototypeDistance => parts.pd,
        LossTerm::Total => parts.total,
    };
    let g = tape.backward(out);
    let grad = |v: Var, like: &Mat| g.get(v).cloned().unwrap_or_else(|| Mat::zeros(like.dim()));
    Ok((tape.scalar(out), grad(rv, r), grad(pv, p)))
}
