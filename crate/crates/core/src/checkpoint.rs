//! Flat named-tensor archive shared by every trained stage.
//!
//! Layout (little endian): magic `CSGGCKPT`, `u32` version, kind string,
//! meta entry count and `(key, value)` strings, tensor count, then per tensor
//! its name, `u64` rows, `u64` cols and row-major `f64` data. Strings are a
//! `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Mat;
use crate::nn::{Adam, AdamConfig, ParamSet};

pub const MAGIC: &[u8; 8] = b"CSGGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint holds a `{found}` stage, expected `{expected}`")]
    Kind { expected: String, found: String },
    #[error("checkpoint is missing `{0}`")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: ParamSet,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| CheckpointError::Format("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), ..Self::default() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let kind = r.string()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            meta.insert(k, r.string()?);
        }
        let mut tensors = ParamSet::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
            let len = rows.checked_mul(cols).filter(|&n| n <= buf.len() / 8).ok_or_else(|| CheckpointError::Format(format!("tensor `{name}` too large")))?;
            let data: Vec<f64> = r.take(len * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.insert(name, Mat::from_shape_vec((rows, cols), data).expect("sized"));
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&buf)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::Kind { expected: kind.into(), found: self.kind.clone() })
        }
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| CheckpointError::Missing(key.into()))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        self.meta_str(key)?.parse().map_err(|_| CheckpointError::Format(format!("meta `{key}` does not parse")))
    }

    /// Stores every tensor of `params` under `prefix/`.
    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.tensors.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Tensors stored under `prefix/`, with the prefix stripped.
    pub fn params(&self, prefix: &str) -> ParamSet {
        let lead = format!("{prefix}/");
        let mut out = ParamSet::new();
        for (name, t) in self.tensors.iter() {
            if let Some(rest) = name.strip_prefix(&lead) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    /// Optimiser moments and step count, so training resumes bit-exactly.
    pub fn put_adam(&mut self, prefix: &str, opt: &Adam) {
        self.put_params(&format!("{prefix}.m"), &opt.first);
        self.put_params(&format!("{prefix}.v"), &opt.second);
        self.meta.insert(format!("{prefix}.step"), opt.step.to_string());
    }

    pub fn adam(&self, prefix: &str, config: AdamConfig) -> Result<Adam, CheckpointError> {
        Ok(Adam {
            config,
            step: self.meta_parse(&format!("{prefix}.step"))?,
            first: self.params(&format!("{prefix}.m")),
            second: self.params(&format!("{prefix}.v")),
        })
    }
}
