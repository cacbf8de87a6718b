use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::eval::EvalConfig;
use crate::pipeline::{PipelineConfig, SplitFractions};

/// Overrides `paths.report_dir` when set.
pub const REPORT_DIR_ENV: &str = "CASCADE_SGG_REPORT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_dir: "runs/data".into(), checkpoint_dir: "runs/checkpoints".into(), report_dir: "runs/reports".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Row label in reports.
    pub name: String,
    pub seed: u64,
    pub paths: Paths,
    /// Category vocabulary file; the bundled toy vocabulary when absent.
    pub vocabulary: Option<PathBuf>,
    /// Scene recipe files; the bundled harbor/airport/power-line set when empty.
    pub recipes: Vec<PathBuf>,
    /// Word-vector table for prototype initialisation; bundled when absent.
    pub word_vectors: Option<PathBuf>,
    pub scenes: usize,
    pub splits: SplitFractions,
    /// Scene-level worker threads for prediction; 1 runs inline.
    pub workers: usize,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            paths: Paths::default(),
            vocabulary: None,
            recipes: Vec::new(),
            word_vectors: None,
            scenes: 200,
            splits: SplitFractions::default(),
            workers: 1,
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Parses the right-hand side of `key=value`: a TOML literal when it is one,
/// a bare string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `path` (dotted) inside `root`, creating intermediate tables.
pub fn set_dotted(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), HarnessError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = root;
    for k in parents {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(HarnessError::Config(format!("override `{path}`: `{k}` is not a table"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then `key=value` overrides, then the
    /// report-dir environment variable.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| HarnessError::Config(format!("{}: {}", p.display(), one_line(&e.to_string()))))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(one_line(&e.to_string())))?;
        if let Some(dir) = std::env::var_os(REPORT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.paths.report_dir = dir.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.splits.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.eval.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(HarnessError::Config(format!("run name `{}` must be non-empty and contain no path separators", self.name)));
        }
        for p in self.vocabulary.iter().chain(&self.recipes).chain(&self.word_vectors) {
            if !p.is_file() {
                return Err(HarnessError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialise")
    }

    /// Settings that differ from the values stated for the full-scale
    /// experiments, one `key: ours (reference)` line each.
    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |key: &str, ours: String, reference: &str| {
            if ours != reference {
                out.push(format!("{key}: {ours} (reference {reference})"));
            }
        };
        check("eval.ks", format!("{:?}", self.eval.ks), "[1500, 2000]");
        check("eval.iou_threshold", self.eval.iou_threshold.to_string(), "0.5");
        check("splits", format!("{}/{}/{}", self.splits.train, self.splits.val, self.splits.test), "0.6/0.2/0.2");
        check("pipeline.rpcm.model.iterations", self.pipeline.rpcm.model.iterations.to_string(), "4");
        check("pipeline.ppg.k1", self.pipeline.ppg.k1.to_string(), "10000");
        check("pipeline.detector.nms_iou", self.pipeline.detector.nms_iou.to_string(), "0.5");
        out
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
