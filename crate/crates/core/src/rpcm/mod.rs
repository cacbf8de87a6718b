//! Relation prediction over the sparse pair graph: bi-context message passing
//! followed by prototype matching in a joint embedding space.

mod losses;
mod pba;
mod prototype;


use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use losses::{
    check_nonzero, hard_negatives, ic_loss_tape, id_loss_tape, loss_and_gradients, loss_instance_contrastive,
    loss_instance_distance, loss_instance_distance_batch, loss_prototype_contrast, loss_prototype_distance, normalize,
    pc_loss_tape, pd_loss_tape, rpcm_loss_tape, rpcm_total_loss, smallest_pairs, LossConfig, LossParts, LossTerm, LossVars,
    Reduction,
};
pub use pba::{
    attention_coefficients, entity_message_update, entity_update_tape, fuse_tape, global_local_fuse, pba_run, pba_step_tape,
    relation_message_update, relation_update_tape, Adjacency, ContextSwitches, GraphState, MessageKind, MessagingParams,
    MessagingVars, ENTITY_KINDS, RELATION_KINDS,
};
pub use prototype::{hash_vector, init_prototypes, label_tokens, EmbeddingTable, PrototypeBank, BACKGROUND_LABEL};

use crate::autodiff::{Mat, Tape, Var};
use crate::nn::{Activation, Adam, AdamConfig, Bound, Dense, Mlp, ParamSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpcmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding table: {0}")]
    Embedding(String),
    #[error("no known token in label `{0}`")]
    UnknownLabel(String),
    #[error("zero vector at row {0} cannot be normalised")]
    ZeroVector(usize),
    #[error("label {0} outside the prototype range")]
    Label(usize),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Cosine matching against relation prototypes.
    #[default]
    Prototype,
    /// Plain linear softmax head, for ablations.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpcmConfig {
    /// Width of entity and relation features inside message passing.
    pub hidden: usize,
    /// Width of the joint matching space.
    pub joint: usize,
    /// Hidden width of the two-layer projection heads.
    pub map_hidden: usize,
    /// Hidden activation of the projection heads.
    pub map_activation: Activation,
    pub iterations: usize,
    pub context: ContextSwitches,
    /// Adds a learned background prototype at index 0.
    pub background: bool,
    /// One projection head for both relations and prototypes.
    pub share_map: bool,
    pub classifier: ClassifierKind,
    pub loss: LossConfig,
}

impl Default for RpcmConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            joint: 64,
            map_hidden: 64,
            map_activation: Activation::Tanh,
            iterations: 4,
            context: ContextSwitches::default(),
            background: true,
            share_map: false,
            classifier: ClassifierKind::Prototype,
            loss: LossConfig::default(),
        }
    }
}

/// One graph (or several stacked block-diagonally) ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcmInput {
    pub entity: Mat,
    pub relation: Mat,
    pub subjects: Vec<usize>,
    pub objects: Vec<usize>,
    /// Object-id pair of every relation row.
    pub pairs: Vec<(u32, u32)>,
}

impl RpcmInput {
    /// Concatenates graphs; entity indices of later graphs are offset.
    pub fn stack(parts: &[&RpcmInput]) -> Result<Self, RpcmError> {
        let first = parts.first().ok_or_else(|| RpcmError::Shape("nothing to stack".into()))?;
        let (de, dr) = (first.entity.ncols(), first.relation.ncols());
        let ne: usize = parts.iter().map(|p| p.entity.nrows()).sum();
        let nr: usize = parts.iter().map(|p| p.relation.nrows()).sum();
        let mut entity = Mat::zeros((ne, de));
        let mut relation = Mat::zeros((nr, dr));
        let (mut subjects, mut objects, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
        let (mut eo, mut ro) = (0, 0);
        for p in parts {
            if p.entity.ncols() != de || p.relation.ncols() != dr {
                return Err(RpcmError::Shape("feature widths differ between stacked graphs".into()));
            }
            entity.slice_mut(ndarray::s![eo..eo + p.entity.nrows(), ..]).assign(&p.entity);
            relation.slice_mut(ndarray::s![ro..ro + p.relation.nrows(), ..]).assign(&p.relation);
            subjects.extend(p.subjects.iter().map(|s| s + eo));
            objects.extend(p.objects.iter().map(|o| o + eo));
            pairs.extend(&p.pairs);
            eo += p.entity.nrows();
            ro += p.relation.nrows();
        }
        Ok(Self { entity, relation, subjects, objects, pairs })
    }
}

/// Per-pair output: scaled cosine similarity to every prototype, the argmax
/// and softmax probabilities over prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub pair: (u32, u32),
    pub similarities: Vec<f64>,
    pub class: usize,
    pub probabilities: Vec<f64>,
    pub score: f64,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `sᵢ = ⟨r̄, p̄ᵢ⟩ / τ` for every prototype row of `p_bar` (already normalised),
/// argmax with ties to the lowest index.
pub fn predict_relation(pair: (u32, u32), r: &[f64], p_bar: &Mat, tau: f64) -> Result<RelationPrediction, RpcmError> {
    if r.len() != p_bar.ncols() {
        return Err(RpcmError::Shape(format!("r has {} values, prototypes {}", r.len(), p_bar.ncols())));
    }
    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(RpcmError::ZeroVector(0));
    }
    let similarities: Vec<f64> =
        p_bar.rows().into_iter().map(|p| p.iter().zip(r).map(|(a, b)| a * b / n).sum::<f64>() / tau).collect();
    let class = argmax(&similarities);
    let probabilities = softmax(&similarities);
    Ok(RelationPrediction { pair, score: probabilities[class], class, similarities, probabilities })
}

const PROTO_INIT: &str = "proto_init";
const PROTO_BACKGROUND: &str = "proto_bg";

/// The full relation predictor: local encoders, message passing, prototype
/// bank and projection heads, all parameters in one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct RpcmModel {
    pub config: RpcmConfig,
    pub entity_input: usize,
    pub relation_input: usize,
    pub relation_labels: Vec<String>,
    pub params: ParamSet,
}

impl RpcmModel {
    pub fn new(
        config: RpcmConfig,
        entity_input: usize,
        relation_input: usize,
        relation_labels: &[String],
        table: &EmbeddingTable,
        rng: &mut impl Rng,
    ) -> Result<Self, RpcmError> {
        if config.iterations == 0 || config.hidden == 0 || config.joint == 0 || config.map_hidden == 0 {
            return Err(RpcmError::Config("iterations and widths must be positive".into()));
        }
        if relation_labels.is_empty() {
            return Err(RpcmError::Config("no relation classes".into()));
        }
        let t = init_prototypes(relation_labels, table)?;
        let mut m = Self {
            config,
            entity_input,
            relation_input,
            relation_labels: relation_labels.to_vec(),
            params: ParamSet::new(),
        };
        if m.config.classifier == ClassifierKind::Prototype {
            m.config.loss.validate(m.num_prototypes())?;
        }
        let mut params = ParamSet::new();
        m.entity_encoder().init(&mut params, rng);
        m.relation_encoder().init(&mut params, rng);
        MessagingParams::init(m.config.hidden, m.config.hidden, rng).insert_into(&mut params);
        match m.config.classifier {
            ClassifierKind::Prototype => {
                m.prototype_encoder(t.ncols()).init(&mut params, rng);
                m.map_r().init(&mut params, rng);
                if !m.config.share_map {
                    m.map_p().init(&mut params, rng);
                }
                if m.config.background {
                    let bg = hash_vector(BACKGROUND_LABEL, t.ncols());
                    params.insert(PROTO_BACKGROUND, Mat::from_shape_vec((1, t.ncols()), bg).expect("row"));
                }
                params.insert(PROTO_INIT, t);
            }
            ClassifierKind::Linear => m.linear_head().init(&mut params, rng),
        }
        m.params = params;
        Ok(m)
    }

    /// Prototype rows, including the background one when enabled.
    pub fn num_prototypes(&self) -> usize {
        self.relation_labels.len() + usize::from(self.config.background)
    }

    /// Prototype index of a relation class, or of "no relation".
    pub fn label_for(&self, relation: Option<usize>) -> Option<usize> {
        match (relation, self.config.background) {
            (Some(r), true) => Some(r + 1),
            (Some(r), false) => Some(r),
            (None, true) => Some(0),
            (None, false) => None,
        }
    }

    /// Relation class of a prototype index, `None` for the background.
    pub fn relation_of(&self, prototype: usize) -> Option<usize> {
        if self.config.background {
            prototype.checked_sub(1)
        } else {
            Some(prototype)
        }
    }

    fn entity_encoder(&self) -> Dense {
        Dense { prefix: "enc_e".into(), input: self.entity_input, output: self.config.hidden, activation: Activation::Tanh }
    }

    fn relation_encoder(&self) -> Dense {
        Dense { prefix: "enc_r".into(), input: self.relation_input, output: self.config.hidden, activation: Activation::Tanh }
    }

    fn prototype_encoder(&self, word_dim: usize) -> Dense {
        Dense { prefix: "enc_p".into(), input: word_dim, output: self.config.hidden, activation: Activation::Tanh }
    }

    fn map_r(&self) -> Mlp {
        let c = &self.config;
        Mlp::new("map_r", &[c.hidden, c.map_hidden, c.joint], c.map_activation, Activation::Identity)
    }

    fn map_p(&self) -> Mlp {
        if self.config.share_map {
            return self.map_r();
        }
        let c = &self.config;
        Mlp::new("map_p", &[c.hidden, c.map_hidden, c.joint], c.map_activation, Activation::Identity)
    }

    fn linear_head(&self) -> Dense {
        Dense {
            prefix: "cls".into(),
            input: self.config.hidden,
            output: self.num_prototypes(),
            activation: Activation::Identity,
        }
    }

    fn check_input(&self, input: &RpcmInput) -> Result<(), RpcmError> {
        if input.entity.ncols() != self.entity_input || input.relation.ncols() != self.relation_input {
            return Err(RpcmError::Shape(format!(
                "inputs {}/{} wide, model expects {}/{}",
                input.entity.ncols(),
                input.relation.ncols(),
                self.entity_input,
                self.relation_input
            )));
        }
        if input.pairs.len() != input.relation.nrows() {
            return Err(RpcmError::Shape(format!("{} pairs for {} relation rows", input.pairs.len(), input.relation.nrows())));
        }
        if input.entity.iter().chain(input.relation.iter()).any(|v| !v.is_finite()) {
            return Err(RpcmError::NonFinite);
        }
        Ok(())
    }

    /// Context-augmented relation features after the configured iterations.
    pub fn relation_features_tape(&self, tape: &mut Tape, bound: &Bound, input: &RpcmInput) -> Result<Var, RpcmError> {
        self.check_input(input)?;
        let adj = Adjacency::new(input.entity.nrows(), &input.subjects, &input.objects)?;
        let xe = tape.constant(input.entity.clone());
        let xr = tape.constant(input.relation.clone());
        let fe0 = self.entity_encoder().forward(tape, bound, xe);
        let fr0 = self.relation_encoder().forward(tape, bound, xr);
        let vars = MessagingVars::from_bound(bound);
        let (mut fe, mut fr) = (fe0, fr0);
        for _ in 0..self.config.iterations {
            (fe, fr) = pba_step_tape(tape, &vars, &adj, self.config.context, fe, fr, fe0, fr0);
        }
        Ok(fr)
    }

    /// Raw joint-space prototype vectors `MAP_p(Enc_p(T))`.
    pub fn prototypes_tape(&self, tape: &mut Tape, bound: &Bound) -> Var {
        let t = bound.var(PROTO_INIT);
        let t = match bound.try_var(PROTO_BACKGROUND) {
            Some(bg) => {
                let a = tape.transpose(bg);
                let b = tape.transpose(t);
                let c = tape.concat_cols(a, b);
                tape.transpose(c)
            }
            None => t,
        };
        let word_dim = tape.value(t).ncols();
        let pro = self.prototype_encoder(word_dim).forward(tape, bound, t);
        self.map_p().forward(tape, bound, pro)
    }

    /// Raw joint-space relation vectors `MAP_r(Rel)`.
    pub fn project_tape(&self, tape: &mut Tape, bound: &Bound, rel: Var) -> Var {
        self.map_r().forward(tape, bound, rel)
    }

    /// Relation rows in the joint space and the normalised prototype bank.
    pub fn project_to_joint_space(&self, input: &RpcmInput) -> Result<(Mat, Mat), RpcmError> {
        self.require_prototypes()?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rel = self.relation_features_tape(&mut tape, &bound, input)?;
        let r = self.project_tape(&mut tape, &bound, rel);
        let p = self.prototypes_tape(&mut tape, &bound);
        Ok((tape.value(r).clone(), normalize(tape.value(p))?))
    }

    fn require_prototypes(&self) -> Result<(), RpcmError> {
        match self.config.classifier {
            ClassifierKind::Prototype => Ok(()),
            ClassifierKind::Linear => Err(RpcmError::Config("linear classifier has no prototype bank".into())),
        }
    }

    /// Normalised prototype bank with labels (background first when enabled).
    pub fn prototype_bank(&self) -> Result<PrototypeBank, RpcmError> {
        self.require_prototypes()?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let p = self.prototypes_tape(&mut tape, &bound);
        let mut labels = Vec::new();
        if self.config.background {
            labels.push(BACKGROUND_LABEL.to_string());
        }
        labels.extend(self.relation_labels.iter().cloned());
        Ok(PrototypeBank { labels, vectors: normalize(tape.value(p))? })
    }

    /// Training objective for `(relation row, prototype label)` samples.
    pub fn loss_tape(&self, tape: &mut Tape, bound: &Bound, input: &RpcmInput, samples: &[(usize, usize)]) -> Result<LossVars, RpcmError> {
        if let Some(&(row, _)) = samples.iter().find(|(row, _)| *row >= input.relation.nrows()) {
            return Err(RpcmError::Shape(format!("sample row {row} out of range")));
        }
        let rel = self.relation_features_tape(tape, bound, input)?;
        let rows: Vec<usize> = samples.iter().map(|s| s.0).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.1).collect();
        let picked = tape.gather_rows(rel, rows);
        match self.config.classifier {
            ClassifierKind::Prototype => {
                let r = self.project_tape(tape, bound, picked);
                let p = self.prototypes_tape(tape, bound);
                rpcm_loss_tape(tape, r, p, &labels, &self.config.loss)
            }
            ClassifierKind::Linear => {
                if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_prototypes()) {
                    return Err(RpcmError::Label(bad));
                }
                let logits = self.linear_head().forward(tape, bound, picked);
                let logp = tape.log_softmax(logits);
                let ll = tape.pick(logp, labels);
                let m = tape.mean(ll);
                let ic = tape.scale(m, -1.0);
                let zero = tape.constant(Mat::zeros((1, 1)));
                Ok(LossVars { ic, id: zero, pc: zero, pd: zero, total: ic })
            }
        }
    }

    /// Loss values and gradients w.r.t. every trainable parameter.
    pub fn loss_and_grads(&self, input: &RpcmInput, samples: &[(usize, usize)]) -> Result<(LossParts, BTreeMap<String, Mat>), RpcmError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let loss = self.loss_tape(&mut tape, &bound, input, samples)?;
        let grads = tape.backward(loss.total);
        let mut g = bound.grads(&tape, &grads);
        g.remove(PROTO_INIT);
        Ok((loss.values(&tape), g))
    }

    /// Names of the parameters that training updates.
    pub fn trainable(&self) -> Vec<String> {
        self.params.names().filter(|n| n.as_str() != PROTO_INIT).cloned().collect()
    }

    /// Predictions for every relation row of `input`.
    pub fn predict(&self, input: &RpcmInput) -> Result<Vec<RelationPrediction>, RpcmError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rel = self.relation_features_tape(&mut tape, &bound, input)?;
        match self.config.classifier {
            ClassifierKind::Prototype => {
                let r = self.project_tape(&mut tape, &bound, rel);
                let p = self.prototypes_tape(&mut tape, &bound);
                let p_bar = normalize(tape.value(p))?;
                let r = tape.value(r);
                (0..r.nrows())
                    .map(|i| predict_relation(input.pairs[i], &r.row(i).to_vec(), &p_bar, self.config.loss.tau))
                    .collect()
            }
            ClassifierKind::Linear => {
                let logits = self.linear_head().forward(&mut tape, &bound, rel);
                let l = tape.value(logits);
                Ok((0..l.nrows())
                    .map(|i| {
                        let similarities = l.row(i).to_vec();
                        let class = argmax(&similarities);
                        let probabilities = softmax(&similarities);
                        RelationPrediction { pair: input.pairs[i], score: probabilities[class], class, similarities, probabilities }
                    })
                    .collect())
            }
        }
    }
}

/// Model plus optimiser state.
#[derive(Debug, Clone)]
pub struct RpcmTrainer {
    pub model: RpcmModel,
    pub opt: Adam,
}

impl RpcmTrainer {
    pub fn new(model: RpcmModel, adam: AdamConfig) -> Self {
        Self { model, opt: Adam::new(adam) }
    }

    /// One optimiser step; returns the loss before the update.
    pub fn train_step(&mut self, input: &RpcmInput, samples: &[(usize, usize)]) -> Result<LossParts, RpcmError> {
        if samples.is_empty() {
            return Err(RpcmError::Shape("empty sample batch".into()));
        }
        let (parts, grads) = self.model.loss_and_grads(input, samples)?;
        if !parts.total.is_finite() {
            return Err(RpcmError::NonFinite);
        }
        self.opt.update(&mut self.model.params, &grads);
        Ok(parts)
    }
}
