//! Named parameter sets, dense layers and the Adam optimiser shared by the
//! trainable stages.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Mat, Tape, Var};

/// Named matrices, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.tensors.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        Bound { vars }
    }
}

/// Leaf handles of a [`ParamSet`] on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collects gradients by parameter name, zero-filled where absent.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| Mat::zeros(tape.value(v).raw_dim()));
                (k.clone(), g)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Affine map followed by an activation; parameters `{prefix}.w`, `{prefix}.b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Glorot-normal weights, zero bias.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        let std = (2.0 / (self.input + self.output) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        params.insert(self.weight_name(), Mat::from_shape_fn((self.input, self.output), |_| normal.sample(rng)));
        params.insert(self.bias_name(), Mat::zeros((1, self.output)));
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, bound.var(&self.weight_name()));
        let y = tape.add_row(y, bound.var(&self.bias_name()));
        self.activation.apply(tape, y)
    }

    /// Plain forward pass without a tape.
    pub fn apply(&self, params: &ParamSet, x: &Mat) -> Mat {
        let w = params.get(&self.weight_name()).expect("dense weight");
        let b = params.get(&self.bias_name()).expect("dense bias");
        let y = x.dot(w) + b;
        match self.activation {
            Activation::Identity => y,
            Activation::Tanh => y.mapv(f64::tanh),
            Activation::Sigmoid => y.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }
}

/// A stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Layers `dims[0] → dims[1] → …` with `hidden` activations and an
    /// `output` activation on the last layer.
    pub fn new(prefix: &str, dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Dense {
                prefix: format!("{prefix}.{i}"),
                input: dims[i],
                output: dims[i + 1],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(tape, bound, x);
        }
        x
    }

    pub fn apply(&self, params: &ParamSet, x: &Mat) -> Mat {
        self.layers.iter().fold(x.clone(), |acc, l| l.apply(params, &acc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: 5.0 }
    }
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: ParamSet::new(), second: ParamSet::new() }
    }

    /// Applies one update to every parameter that has a gradient in `grads`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Mat>) {
        let c = self.config;
        self.step += 1;
        let total: f64 = grads.values().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        let clip = if c.clip_norm > 0.0 && total > c.clip_norm { c.clip_norm / total } else { 1.0 };
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.first.tensors.entry(name.clone()).or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self.second.tensors.entry(name.clone()).or_insert_with(|| Mat::zeros(g.raw_dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_tape_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new("m", &[4, 6, 3], Activation::Tanh, Activation::Identity);
        let mut params = ParamSet::new();
        mlp.init(&mut params, &mut rng);
        let x = Mat::from_shape_fn((5, 4), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &bound, xv);
        let diff = (tape.value(y) - &mlp.apply(&params, &x)).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = ParamSet::new();
        params.insert("x", Mat::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() });
        for _ in 0..300 {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let sq = tape.square(b.var("x"));
            let loss = tape.sum(sq);
            let g = tape.backward(loss);
            opt.update(&mut params, &b.grads(&tape, &g));
        }
        assert!(params.get("x").unwrap().iter().all(|v| v.abs() < 0.05));
    }
}
