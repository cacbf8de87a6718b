//! The cascade: object views, pair proposal, relation prediction, and the
//! per-task prediction graphs handed to the evaluator.

mod baseline;
mod inputs;
mod objects;
mod relations;

#[cfg(test)]
mod tests;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::FrequencyBaseline;
pub use inputs::{
    all_pairs, build_rpcm_input, entity_features, entity_input_dim, one_hot_classes, pair_positions, relation_features,
    relation_input_dim, ENTITY_GEOMETRY_DIM,
};
pub use objects::{
    decode_box, generate_proposals, regression_target, DetectorStage, DetectorStageConfig, ObjectDetector, Proposal, REGRESSION_DIM,
};
pub use relations::{
    positive_pair_features, predict_relations, training_scene, PairProposer, PpgStage, PpgStageConfig, RpcmStage, RpcmStageConfig,
    TrainingScene,
};

use crate::autodiff::Mat;
use crate::checkpoint::CheckpointError;
use crate::detection::DetectionError;
use crate::eval::{evaluate_task, EvalConfig, EvalError, EvalReport, ImageEval, Task};
use crate::geometry::GeometryError;
use crate::model::{CategoryVocabulary, SceneGraph};
use crate::ppg::PpgError;
use crate::rpcm::{RpcmError, RpcmModel};
use crate::synth::{FeatureModel, GenerationError, SyntheticScene};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("bad input data: {0}")]
    Data(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("pair proposal: {0}")]
    Ppg(#[from] PpgError),
    #[error("relation predictor: {0}")]
    Rpcm(#[from] RpcmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Train/val/test shares of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!("split fractions {parts:?} must lie in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Validation and test sizes are floored; training takes the remainder.
    pub fn counts(&self, n: usize) -> Result<[usize; 3], PipelineError> {
        self.validate()?;
        // The epsilon keeps products like 0.29·100 = 28.999… from losing a scene.
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let (val, test) = (floor(self.val), floor(self.test));
        Ok([n - val - test, val, test])
    }

    /// Consecutive slices in corpus order.
    pub fn split<T: Clone>(&self, items: &[T]) -> Result<[Vec<T>; 3], PipelineError> {
        let [a, b, _] = self.counts(items.len())?;
        Ok([items[..a].to_vec(), items[a..a + b].to_vec(), items[a + b..].to_vec()])
    }
}

/// Where the relation stage gets its candidate pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    /// Top-`k₁` pairs of the trained proposer.
    #[default]
    Proposer,
    /// Every ordered pair; no proposer needed.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pairs: PairSource,
    pub features: FeatureModel,
    pub ppg: PpgStageConfig,
    pub rpcm: RpcmStageConfig,
    pub detector: DetectorStageConfig,
}

/// Objects as seen by the relation stage: boxes with their predicted labels,
/// class distributions, features and label confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectView {
    /// Objects only; ids are list positions.
    pub graph: SceneGraph,
    pub class_probs: Mat,
    pub semantic: Mat,
    pub confidence: Vec<f64>,
}

impl ObjectView {
    /// Ground-truth boxes and labels with certain class distributions.
    pub fn ground_truth(scene: &SyntheticScene, features: &FeatureModel, object_classes: usize) -> Self {
        let mut graph = scene.graph.clone();
        graph.triplets.clear();
        Self {
            class_probs: one_hot_classes(&graph, object_classes),
            semantic: features.object_features(&scene.graph, scene.seed),
            confidence: vec![1.0; graph.objects.len()],
            graph,
        }
    }
}

/// Which relation scorer fills the prediction graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rpcm,
    Frequency,
    /// Emits the ground truth verbatim; a harness sanity check.
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rpcm => "rpcm",
            Method::Frequency => "frequency",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rpcm" => Ok(Method::Rpcm),
            "frequency" | "freq" => Ok(Method::Frequency),
            "oracle" => Ok(Method::Oracle),
            _ => Err(format!("unknown method `{s}` (expected rpcm, frequency or oracle)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trained stages needed to predict scene graphs.
#[derive(Debug, Clone)]
pub struct Cascade<'a> {
    pub features: FeatureModel,
    pub object_classes: usize,
    /// `None` keeps every ordered pair.
    pub proposer: Option<&'a PairProposer>,
    pub rpcm: Option<&'a RpcmModel>,
    pub baseline: Option<&'a FrequencyBaseline>,
    pub detector: Option<&'a ObjectDetector>,
}

impl Cascade<'_> {
    /// The objects a task hands to the relation stage.
    pub fn objects(&self, task: Task, scene: &SyntheticScene) -> Result<ObjectView, PipelineError> {
        let gt = ObjectView::ground_truth(scene, &self.features, self.object_classes);
        let need = || PipelineError::Config(format!("{task} needs a trained detector stage"));
        match task {
            Task::PredCls => Ok(gt),
            Task::SgCls => Ok(self.detector.ok_or_else(need)?.classify(&gt)?),
            Task::SgDet => Ok(self.detector.ok_or_else(need)?.detect(scene, &self.features)?),
        }
    }

    pub fn candidate_pairs(&self, view: &ObjectView) -> Result<Vec<(u32, u32)>, PipelineError> {
        match self.proposer {
            Some(p) => p.propose(&view.graph, &view.semantic),
            None => Ok(all_pairs(&view.graph)),
        }
    }

    /// Prediction graph of one scene.
    pub fn predict(&self, task: Task, method: Method, scene: &SyntheticScene) -> Result<SceneGraph, PipelineError> {
        if method == Method::Oracle {
            return Ok(scene.graph.clone());
        }
        let view = self.objects(task, scene)?;
        let pairs = self.candidate_pairs(&view)?;
        let mut out = view.graph.clone();
        out.triplets = match method {
            Method::Rpcm => {
                let model = self.rpcm.ok_or_else(|| PipelineError::Config("no relation predictor loaded".into()))?;
                predict_relations(model, &view, &pairs)?
            }
            Method::Frequency => {
                let b = self.baseline.ok_or_else(|| PipelineError::Config("no frequency baseline fitted".into()))?;
                b.predict(&view, &pairs)
            }
            Method::Oracle => unreachable!(),
        };
        Ok(out)
    }

    /// Predictions in scene order. With `workers > 1` scenes run on a local
    /// thread pool; results are merged in scene order either way.
    pub fn predict_all(&self, task: Task, method: Method, scenes: &[SyntheticScene], workers: usize) -> Result<Vec<SceneGraph>, PipelineError> {
        if workers <= 1 {
            return scenes.iter().map(|s| self.predict(task, method, s)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| PipelineError::Config(e.to_string()))?;
        pool.install(|| scenes.par_iter().map(|s| self.predict(task, method, s)).collect())
    }
}

/// Scores `predictions` (aligned with `scenes`) against their ground truth.
pub fn evaluate_corpus(
    scenes: &[SyntheticScene],
    predictions: &[SceneGraph],
    vocab: &CategoryVocabulary,
    cfg: &EvalConfig,
) -> Result<EvalReport, PipelineError> {
    if scenes.len() != predictions.len() {
        return Err(PipelineError::Data(format!("{} scenes but {} predictions", scenes.len(), predictions.len())));
    }
    let images: Vec<ImageEval<'_>> =
        scenes.iter().zip(predictions).map(|(s, p)| ImageEval { name: &s.name, gt: &s.graph, pred: p }).collect();
    Ok(evaluate_task(&images, vocab.relation_classes(), cfg)?)
}
