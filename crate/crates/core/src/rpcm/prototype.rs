use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::RpcmError;
use crate::autodiff::Mat;

const BUNDLED_VECTORS: &str = include_str!("../../assets/word_vectors.txt");

/// Token → vector lookup with an optional deterministic hashing fallback for
/// tokens outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    pub hash_fallback: bool,
}

impl EmbeddingTable {
    /// Parses `token v1 … vd` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, RpcmError> {
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line").to_lowercase();
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|e| RpcmError::Embedding(format!("line {}: {e}", n + 1))))
                .collect::<Result<_, _>>()?;
            if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
                return Err(RpcmError::Embedding(format!("line {}: expected {} values", n + 1, dim.unwrap_or(0))));
            }
            vectors.insert(token, v);
        }
        let dim = dim.ok_or_else(|| RpcmError::Embedding("empty table".into()))?;
        Ok(Self { dim, vectors, hash_fallback: false })
    }

    /// The table shipped with the crate, with hashing fallback enabled.
    pub fn bundled() -> Self {
        let mut t = Self::from_text(BUNDLED_VECTORS).expect("bundled table parses");
        t.hash_fallback = true;
        t
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(&token.to_lowercase())
    }

    pub fn lookup(&self, token: &str) -> Option<Vec<f64>> {
        let token = token.to_lowercase();
        match self.vectors.get(&token) {
            Some(v) => Some(v.clone()),
            None if self.hash_fallback => Some(hash_vector(&token, self.dim)),
            None => None,
        }
    }
}

/// Unit vector seeded by the FNV-1a hash of the token.
pub fn hash_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn label_tokens(label: &str) -> Vec<&str> {
    label.split(|c: char| c == '_' || c.is_whitespace()).filter(|t| !t.is_empty()).collect()
}

/// Mean token embedding of every label, one row per label.
pub fn init_prototypes(labels: &[String], table: &EmbeddingTable) -> Result<Mat, RpcmError> {
    let mut out = Mat::zeros((labels.len(), table.dim));
    for (i, label) in labels.iter().enumerate() {
        let vecs: Vec<Vec<f64>> = label_tokens(label).into_iter().filter_map(|t| table.lookup(t)).collect();
        if vecs.is_empty() {
            return Err(RpcmError::UnknownLabel(label.clone()));
        }
        for v in &vecs {
            for (j, x) in v.iter().enumerate() {
                out[[i, j]] += x / vecs.len() as f64;
            }
        }
    }
    Ok(out)
}

/// Prototype vectors with their labels; row 0 is the background prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub labels: Vec<String>,
    pub vectors: Mat,
}

pub const BACKGROUND_LABEL: &str = "__background__";

impl PrototypeBank {
    /// `label v1 … vd` per line, full float precision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (label, row) in self.labels.iter().zip(self.vectors.rows()) {
            s.push_str(label);
            for v in row {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, RpcmError> {
        let mut labels = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut dim = 0;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            labels.push(parts.next().expect("non-empty").to_string());
            let before = rows.len();
            for p in parts {
                rows.push(p.parse().map_err(|e| RpcmError::Embedding(format!("line {}: {e}", n + 1)))?);
            }
            if labels.len() == 1 {
                dim = rows.len();
            }
            if rows.len() - before != dim || dim == 0 {
                return Err(RpcmError::Embedding(format!("line {}: expected {dim} values", n + 1)));
            }
        }
        let vectors = Mat::from_shape_vec((labels.len(), dim), rows).map_err(|e| RpcmError::Shape(e.to_string()))?;
        Ok(Self { labels, vectors })
    }
}
