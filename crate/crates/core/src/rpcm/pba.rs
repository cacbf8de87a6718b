use std::collections::BTreeSet;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RpcmError;
use crate::autodiff::{Mat, Tape, Var};
use crate::nn::{Bound, ParamSet};

/// The six directed message types of the bipartite entity/relation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    /// Entity to neighbouring entity.
    EntityEntity,
    /// Relation to its subject entity.
    RelationSubject,
    /// Relation to its object entity.
    RelationObject,
    /// Relation to a relation sharing an endpoint.
    RelationRelation,
    /// Subject entity to its relation.
    SubjectRelation,
    /// Object entity to its relation.
    ObjectRelation,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::EntityEntity,
        MessageKind::RelationSubject,
        MessageKind::RelationObject,
        MessageKind::RelationRelation,
        MessageKind::SubjectRelation,
        MessageKind::ObjectRelation,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MessageKind::EntityEntity => "ee",
            MessageKind::RelationSubject => "rs",
            MessageKind::RelationObject => "ro",
            MessageKind::RelationRelation => "rr",
            MessageKind::SubjectRelation => "sr",
            MessageKind::ObjectRelation => "or",
        }
    }

    /// True when the sender is an entity.
    pub fn from_entity(self) -> bool {
        matches!(self, MessageKind::EntityEntity | MessageKind::SubjectRelation | MessageKind::ObjectRelation)
    }

    /// True when the receiver is an entity.
    pub fn to_entity(self) -> bool {
        matches!(self, MessageKind::EntityEntity | MessageKind::RelationSubject | MessageKind::RelationObject)
    }

    fn index(self) -> usize {
        MessageKind::ALL.iter().position(|&k| k == self).expect("listed")
    }
}

/// Receiver/sender lists of every message type, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub entities: usize,
    pub relations: usize,
    edges: [(Rc<[usize]>, Rc<[usize]>); 6],
}

impl Adjacency {
    pub fn new(entities: usize, subjects: &[usize], objects: &[usize]) -> Result<Self, RpcmError> {
        if subjects.len() != objects.len() {
            return Err(RpcmError::Shape(format!("{} subjects for {} objects", subjects.len(), objects.len())));
        }
        if let Some(&bad) = subjects.iter().chain(objects).find(|&&i| i >= entities) {
            return Err(RpcmError::Shape(format!("entity index {bad} out of range for {entities} entities")));
        }
        let relations = subjects.len();
        let mut ee = BTreeSet::new();
        for (&s, &o) in subjects.iter().zip(objects) {
            if s != o {
                ee.insert((s, o));
                ee.insert((o, s));
            }
        }
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); entities];
        for k in 0..relations {
            incident[subjects[k]].push(k);
            if objects[k] != subjects[k] {
                incident[objects[k]].push(k);
            }
        }
        let mut rr = BTreeSet::new();
        for list in &incident {
            for &a in list {
                for &b in list {
                    if a != b {
                        rr.insert((a, b));
                    }
                }
            }
        }
        let split = |pairs: Vec<(usize, usize)>| -> (Rc<[usize]>, Rc<[usize]>) {
            (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
        };
        let rel_idx: Vec<usize> = (0..relations).collect();
        let edges = [
            split(ee.into_iter().collect()),
            split(subjects.iter().copied().zip(rel_idx.iter().copied()).collect()),
            split(objects.iter().copied().zip(rel_idx.iter().copied()).collect()),
            split(rr.into_iter().collect()),
            split(rel_idx.iter().copied().zip(subjects.iter().copied()).collect()),
            split(rel_idx.iter().copied().zip(objects.iter().copied()).collect()),
        ];
        Ok(Self { entities, relations, edges })
    }

    /// `(receivers, senders)` of one message type.
    pub fn edges(&self, kind: MessageKind) -> (&Rc<[usize]>, &Rc<[usize]>) {
        let (r, s) = &self.edges[kind.index()];
        (r, s)
    }
}

/// Entity and relation features of the current iteration together with their
/// local (iteration-0) versions and the pair graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub entity: Mat,
    pub relation: Mat,
    pub entity0: Mat,
    pub relation0: Mat,
    pub subjects: Vec<usize>,
    pub objects: Vec<usize>,
}

impl GraphState {
    /// Starts at iteration 0: current features equal the local ones.
    pub fn new(entity0: Mat, relation0: Mat, subjects: Vec<usize>, objects: Vec<usize>) -> Result<Self, RpcmError> {
        if relation0.nrows() != subjects.len() {
            return Err(RpcmError::Shape(format!("{} relation rows for {} pairs", relation0.nrows(), subjects.len())));
        }
        Adjacency::new(entity0.nrows(), &subjects, &objects)?;
        if entity0.iter().chain(relation0.iter()).any(|v| !v.is_finite()) {
            return Err(RpcmError::NonFinite);
        }
        Ok(Self { entity: entity0.clone(), relation: relation0.clone(), entity0, relation0, subjects, objects })
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::new(self.entity.nrows(), &self.subjects, &self.objects).expect("validated at construction")
    }
}

/// Message weights, attention vectors and fusion gates.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagingParams {
    /// `w[k]` maps sender rows to receiver width.
    pub weights: [Mat; 6],
    /// Receiver-side attention vector (`d_recv × 1`).
    pub attn_recv: [Mat; 6],
    /// Sender-side attention vector (`d_send × 1`).
    pub attn_send: [Mat; 6],
    /// Gate logits; the fused output is `F₀ + σ(g) ⊙ (F̂ − F₀)`.
    pub gate_entity: Mat,
    pub gate_relation: Mat,
}

pub fn weight_name(kind: MessageKind) -> String {
    format!("pba.w_{}", kind.tag())
}

pub fn attn_recv_name(kind: MessageKind) -> String {
    format!("pba.a_{}_recv", kind.tag())
}

pub fn attn_send_name(kind: MessageKind) -> String {
    format!("pba.a_{}_send", kind.tag())
}

pub const GATE_ENTITY: &str = "pba.gate_e";
pub const GATE_RELATION: &str = "pba.gate_r";

impl MessagingParams {
    fn dims(kind: MessageKind, de: usize, dr: usize) -> (usize, usize) {
        let s = if kind.from_entity() { de } else { dr };
        let r = if kind.to_entity() { de } else { dr };
        (s, r)
    }

    /// Glorot weights, small attention vectors, gates at 0.5.
    pub fn init(de: usize, dr: usize, rng: &mut impl Rng) -> Self {
        let mk = |rows: usize, cols: usize, std: f64, rng: &mut dyn rand::RngCore| {
            let n = Normal::new(0.0, std).expect("positive std");
            Mat::from_shape_fn((rows, cols), |_| n.sample(rng))
        };
        let mut weights = Vec::new();
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for kind in MessageKind::ALL {
            let (s, r) = Self::dims(kind, de, dr);
            weights.push(mk(s, r, (2.0 / (s + r) as f64).sqrt(), rng));
            recv.push(mk(r, 1, 0.1, rng));
            send.push(mk(s, 1, 0.1, rng));
        }
        Self {
            weights: weights.try_into().expect("six"),
            attn_recv: recv.try_into().expect("six"),
            attn_send: send.try_into().expect("six"),
            gate_entity: Mat::zeros((1, de)),
            gate_relation: Mat::zeros((1, dr)),
        }
    }

    /// Every weight and attention vector set to zero; gates at 0.5.
    pub fn zeros(de: usize, dr: usize) -> Self {
        Self {
            weights: MessageKind::ALL.map(|k| Mat::zeros(Self::dims(k, de, dr))),
            attn_recv: MessageKind::ALL.map(|k| Mat::zeros((Self::dims(k, de, dr).1, 1))),
            attn_send: MessageKind::ALL.map(|k| Mat::zeros((Self::dims(k, de, dr).0, 1))),
            gate_entity: Mat::zeros((1, de)),
            gate_relation: Mat::zeros((1, dr)),
        }
    }

    pub fn insert_into(&self, params: &mut ParamSet) {
        for kind in MessageKind::ALL {
            let i = kind.index();
            params.insert(weight_name(kind), self.weights[i].clone());
            params.insert(attn_recv_name(kind), self.attn_recv[i].clone());
            params.insert(attn_send_name(kind), self.attn_send[i].clone());
        }
        params.insert(GATE_ENTITY, self.gate_entity.clone());
        params.insert(GATE_RELATION, self.gate_relation.clone());
    }

    pub fn from_params(params: &ParamSet) -> Result<Self, RpcmError> {
        let get = |n: &str| params.get(n).cloned().ok_or_else(|| RpcmError::MissingParameter(n.to_string()));
        let collect = |f: fn(MessageKind) -> String| -> Result<[Mat; 6], RpcmError> {
            let v: Vec<Mat> = MessageKind::ALL.iter().map(|&k| get(&f(k))).collect::<Result<_, _>>()?;
            Ok(v.try_into().expect("six"))
        };
        Ok(Self {
            weights: collect(weight_name)?,
            attn_recv: collect(attn_recv_name)?,
            attn_send: collect(attn_send_name)?,
            gate_entity: get(GATE_ENTITY)?,
            gate_relation: get(GATE_RELATION)?,
        })
    }

    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        self.insert_into(&mut p);
        p
    }
}

/// Context switches for ablations: with `entity_context` off, entity features
/// stay local; with `relation_context` off, relation features do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextSwitches {
    pub entity_context: bool,
    pub relation_context: bool,
}

impl Default for ContextSwitches {
    fn default() -> Self {
        Self { entity_context: true, relation_context: true }
    }
}

/// Tape handles of [`MessagingParams`].
pub struct MessagingVars {
    weights: [Var; 6],
    attn_recv: [Var; 6],
    attn_send: [Var; 6],
    gate_entity: Var,
    gate_relation: Var,
}

impl MessagingVars {
    pub fn from_bound(bound: &Bound) -> Self {
        let collect = |f: fn(MessageKind) -> String| -> [Var; 6] { MessageKind::ALL.map(|k| bound.var(&f(k))) };
        Self {
            weights: collect(weight_name),
            attn_recv: collect(attn_recv_name),
            attn_send: collect(attn_send_name),
            gate_entity: bound.var(GATE_ENTITY),
            gate_relation: bound.var(GATE_RELATION),
        }
    }
}

/// Attention-weighted message sum of one type, `n_recv × d_recv`. Receivers
/// without contributors get zeros.
fn messages(tape: &mut Tape, vars: &MessagingVars, adj: &Adjacency, kind: MessageKind, fe: Var, fr: Var) -> (Var, Option<Var>) {
    let i = kind.index();
    let (recv, send) = adj.edges(kind);
    let (sender, receiver) = (if kind.from_entity() { fe } else { fr }, if kind.to_entity() { fe } else { fr });
    let n_recv = if kind.to_entity() { adj.entities } else { adj.relations };
    let d_recv = tape.value(vars.weights[i]).ncols();
    if recv.is_empty() {
        return (tape.constant(Mat::zeros((n_recv, d_recv))), None);
    }
    let recv_score = tape.matmul(receiver, vars.attn_recv[i]);
    let send_score = tape.matmul(sender, vars.attn_send[i]);
    let rs = tape.gather_rows(recv_score, recv.clone());
    let ss = tape.gather_rows(send_score, send.clone());
    let e = tape.add(rs, ss);
    let e = tape.tanh(e);
    let alpha = tape.segment_softmax(e, recv.clone());
    let rows = tape.gather_rows(sender, send.clone());
    let projected = tape.matmul(rows, vars.weights[i]);
    let weighted = tape.mul_col(projected, alpha);
    (tape.scatter_add_rows(weighted, recv.clone(), n_recv), Some(alpha))
}

fn update(tape: &mut Tape, vars: &MessagingVars, adj: &Adjacency, kinds: [MessageKind; 3], fe: Var, fr: Var) -> Var {
    let mut total = None;
    for kind in kinds {
        let (m, _) = messages(tape, vars, adj, kind, fe, fr);
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m),
        });
    }
    tape.sigmoid(total.expect("three kinds"))
}

pub const ENTITY_KINDS: [MessageKind; 3] = [MessageKind::EntityEntity, MessageKind::RelationSubject, MessageKind::RelationObject];
pub const RELATION_KINDS: [MessageKind; 3] =
    [MessageKind::RelationRelation, MessageKind::SubjectRelation, MessageKind::ObjectRelation];

/// `F̂ᵉ = σ(Σ attention-weighted entity, subject-role and object-role messages)`.
pub fn entity_update_tape(tape: &mut Tape, vars: &MessagingVars, adj: &Adjacency, fe: Var, fr: Var) -> Var {
    update(tape, vars, adj, ENTITY_KINDS, fe, fr)
}

/// `F̂ʳ = σ(Σ attention-weighted relation, subject and object messages)`.
pub fn relation_update_tape(tape: &mut Tape, vars: &MessagingVars, adj: &Adjacency, fe: Var, fr: Var) -> Var {
    update(tape, vars, adj, RELATION_KINDS, fe, fr)
}

/// `F₀ + σ(g) ⊙ (F̂ − F₀)`.
pub fn fuse_tape(tape: &mut Tape, global: Var, local: Var, gate_logits: Var) -> Var {
    let g = tape.sigmoid(gate_logits);
    let diff = tape.sub(global, local);
    let gated = tape.mul_row(diff, g);
    tape.add(local, gated)
}

/// One iteration: both updates read iteration-`i` features, then each side is
/// fused with its local features.
#[allow(clippy::too_many_arguments)]
pub fn pba_step_tape(
    tape: &mut Tape,
    vars: &MessagingVars,
    adj: &Adjacency,
    switches: ContextSwitches,
    fe: Var,
    fr: Var,
    fe0: Var,
    fr0: Var,
) -> (Var, Var) {
    let ne = if switches.entity_context {
        let g = entity_update_tape(tape, vars, adj, fe, fr);
        fuse_tape(tape, g, fe0, vars.gate_entity)
    } else {
        fe0
    };
    let nr = if switches.relation_context {
        let g = relation_update_tape(tape, vars, adj, fe, fr);
        fuse_tape(tape, g, fr0, vars.gate_relation)
    } else {
        fr0
    };
    (ne, nr)
}

fn with_tape<T>(state: &GraphState, params: &MessagingParams, f: impl FnOnce(&mut Tape, &MessagingVars, &Adjacency, Var, Var) -> T) -> T {
    let mut tape = Tape::new();
    let bound = params.to_params().bind(&mut tape);
    let vars = MessagingVars::from_bound(&bound);
    let adj = state.adjacency();
    let fe = tape.constant(state.entity.clone());
    let fr = tape.constant(state.relation.clone());
    f(&mut tape, &vars, &adj, fe, fr)
}

/// Context-aware entity features `F̂ᵉ_{i+1}` from the current state.
pub fn entity_message_update(state: &GraphState, params: &MessagingParams) -> Mat {
    with_tape(state, params, |tape, vars, adj, fe, fr| {
        let v = entity_update_tape(tape, vars, adj, fe, fr);
        tape.value(v).clone()
    })
}

/// Context-aware relation features `F̂ʳ_{i+1}` from the current state.
pub fn relation_message_update(state: &GraphState, params: &MessagingParams) -> Mat {
    with_tape(state, params, |tape, vars, adj, fe, fr| {
        let v = relation_update_tape(tape, vars, adj, fe, fr);
        tape.value(v).clone()
    })
}

/// Attention coefficients of one message type, aligned with its edge list.
pub fn attention_coefficients(state: &GraphState, params: &MessagingParams, kind: MessageKind) -> Vec<f64> {
    with_tape(state, params, |tape, vars, adj, fe, fr| match messages(tape, vars, adj, kind, fe, fr).1 {
        Some(a) => tape.value(a).iter().copied().collect(),
        None => Vec::new(),
    })
}

/// `(1 − g) ⊙ local + g ⊙ global` with gate values `g ∈ [0, 1]` per column.
pub fn global_local_fuse(global: &Mat, local: &Mat, gate: &[f64]) -> Result<Mat, RpcmError> {
    if global.dim() != local.dim() || gate.len() != global.ncols() {
        return Err(RpcmError::Shape(format!("global {:?}, local {:?}, gate {}", global.dim(), local.dim(), gate.len())));
    }
    let mut out = local.clone();
    for (mut o, g) in out.rows_mut().into_iter().zip(global.rows()) {
        for (j, v) in o.iter_mut().enumerate() {
            *v += gate[j] * (g[j] - *v);
        }
    }
    Ok(out)
}

/// Runs `iterations` update-and-fuse steps from the carried state.
pub fn pba_run(state: &GraphState, params: &MessagingParams, iterations: usize, switches: ContextSwitches) -> GraphState {
    let mut tape = Tape::new();
    let bound = params.to_params().bind(&mut tape);
    let vars = MessagingVars::from_bound(&bound);
    let adj = state.adjacency();
    let mut fe = tape.constant(state.entity.clone());
    let mut fr = tape.constant(state.relation.clone());
    let fe0 = tape.constant(state.entity0.clone());
    let fr0 = tape.constant(state.relation0.clone());
    for _ in 0..iterations {
        (fe, fr) = pba_step_tape(&mut tape, &vars, &adj, switches, fe, fr, fe0, fr0);
    }
    GraphState { entity: tape.value(fe).clone(), relation: tape.value(fr).clone(), ..state.clone() }
}
