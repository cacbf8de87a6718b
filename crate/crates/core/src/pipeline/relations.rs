use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inputs::{all_pairs, build_rpcm_input, entity_input_dim, relation_input_dim};
use super::{ObjectView, PipelineError};
use crate::autodiff::Mat;
use crate::checkpoint::Checkpoint;
use crate::model::{SceneGraph, Triplet};
use crate::nn::AdamConfig;
use crate::ppg::{
    pair_feature_matrix, score_rows, select_top_k, train_ppg, PairScore, PpgArch, PpgModel, PpgTrainConfig, PpgTrainer, Standardizer,
};
use crate::rpcm::{EmbeddingTable, RpcmConfig, RpcmInput, RpcmModel, RpcmTrainer};
use crate::synth::derive_seed;

pub const PPG_KIND: &str = "ppg";
pub const RPCM_KIND: &str = "rpcm";
const PPG_SALT: u64 = 0x5050_4700;
const RPCM_SALT: u64 = 0x5250_434d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpgStageConfig {
    /// Pairs kept per image.
    pub k1: usize,
    /// Latent width `d_Z`; `d_X / 4` when absent.
    pub latent: Option<usize>,
    pub train: PpgTrainConfig,
}

impl Default for PpgStageConfig {
    fn default() -> Self {
        // At 2e-3 the PED₂ maximisation runs away after a few epochs on toy
        // pairs and the ranking collapses; 2e-4 stays stable for 30.
        let train = PpgTrainConfig { adam: AdamConfig { learning_rate: 2e-4, ..AdamConfig::default() }, ..PpgTrainConfig::default() };
        Self { k1: 10_000, latent: None, train }
    }
}

/// Feature rows of every annotated pair.
pub fn positive_pair_features(views: &[(&SceneGraph, &Mat)]) -> Result<Mat, PipelineError> {
    let mut rows: Vec<Mat> = Vec::new();
    for (gt, semantic) in views {
        let pos: Vec<(usize, usize)> = gt
            .annotated_pairs()
            .into_iter()
            .map(|(s, o)| super::pair_positions(gt, &[(s, o)]).and_then(|v| v.first().copied()))
            .collect::<Option<_>>()
            .ok_or_else(|| PipelineError::Data("triplet references a missing object".into()))?;
        rows.push(pair_feature_matrix(gt, semantic, &pos)?);
    }
    let views: Vec<_> = rows.iter().map(Mat::view).collect();
    let width = views.first().map_or(0, |v| v.ncols());
    if views.is_empty() {
        return Ok(Mat::zeros((0, width)));
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| PipelineError::Data(e.to_string()))?)
}

/// Trained pair scorer with its input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProposer {
    pub model: PpgModel,
    pub standardizer: Standardizer,
    pub k1: usize,
}

impl PairProposer {
    /// Scores of every ordered pair of `graph`, in `all_pairs` order.
    pub fn score(&self, graph: &SceneGraph, semantic: &Mat) -> Result<Vec<PairScore>, PipelineError> {
        let pairs = all_pairs(graph);
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let pos = super::pair_positions(graph, &pairs).expect("pairs built from the graph");
        let x = self.standardizer.apply(&pair_feature_matrix(graph, semantic, &pos)?);
        let s = score_rows(&self.model, &x)?;
        Ok(pairs.into_iter().zip(s).map(|(pair, score)| PairScore { pair, score }).collect())
    }

    /// The top-`k₁` candidate pairs in rank order.
    pub fn propose(&self, graph: &SceneGraph, semantic: &Mat) -> Result<Vec<(u32, u32)>, PipelineError> {
        Ok(select_top_k(&self.score(graph, semantic)?, self.k1))
    }
}

/// PPG training state, resumable from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgStage {
    pub trainer: PpgTrainer,
    pub standardizer: Standardizer,
    pub epochs_done: u64,
    pub history: Vec<f64>,
}

impl PpgStage {
    /// Fresh model; the standardiser is fitted on `positives`.
    pub fn init(positives: &Mat, cfg: &PpgStageConfig, seed: u64) -> Result<Self, PipelineError> {
        if positives.nrows() == 0 {
            return Err(PipelineError::Data("no annotated pairs to train the pair proposer on".into()));
        }
        let mut arch = PpgArch::for_input(positives.ncols());
        if let Some(z) = cfg.latent {
            if z == 0 || z >= arch.input {
                return Err(PipelineError::Config(format!("latent width {z} must be in 1..{}", arch.input)));
            }
            arch.latent = z;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PPG_SALT));
        let model = PpgModel::new(arch, &mut rng);
        Ok(Self {
            trainer: PpgTrainer::new(model, cfg.train.adam),
            standardizer: Standardizer::fit(positives),
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    /// Continues training up to epoch `until` (capped at the configured count).
    pub fn train_until(&mut self, positives: &Mat, cfg: &PpgStageConfig, until: u64, seed: u64) -> Result<(), PipelineError> {
        let until = until.min(cfg.train.epochs);
        if until <= self.epochs_done {
            return Ok(());
        }
        let x = self.standardizer.apply(positives);
        let run = PpgTrainConfig { epochs: until, ..cfg.train };
        let epoch_seed = derive_seed(seed, PPG_SALT + 1);
        let h = train_ppg(&mut self.trainer, &x, &run, self.epochs_done + 1, |n| ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, n)))?;
        self.history.extend(h);
        self.epochs_done = until;
        Ok(())
    }

    pub fn proposer(&self, k1: usize) -> PairProposer {
        PairProposer { model: self.trainer.model.clone(), standardizer: self.standardizer.clone(), k1 }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = &self.trainer.model;
        let mut c = Checkpoint::new(PPG_KIND);
        c.meta.insert("arch".into(), serde_json::to_string(&m.arch).expect("arch serialises"));
        c.meta.insert("iteration".into(), m.iteration.to_string());
        c.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        c.meta.insert("history".into(), serde_json::to_string(&self.history).expect("floats serialise"));
        c.put_params("model", &m.params);
        let row = |v: &[f64]| Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
        c.tensors.insert("standardizer/mean", row(&self.standardizer.mean));
        c.tensors.insert("standardizer/scale", row(&self.standardizer.scale));
        c.put_adam("opt1", &self.trainer.opt_ped1);
        c.put_adam("opt2", &self.trainer.opt_ped2);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, cfg: &PpgStageConfig) -> Result<Self, PipelineError> {
        c.expect_kind(PPG_KIND)?;
        let arch: PpgArch = serde_json::from_str(c.meta_str("arch")?).map_err(|e| PipelineError::Data(e.to_string()))?;
        let model = PpgModel { arch, params: c.params("model"), iteration: c.meta_parse("iteration")? };
        let row = |name: &str| -> Result<Vec<f64>, PipelineError> {
            Ok(c.tensors.get(name).ok_or_else(|| crate::checkpoint::CheckpointError::Missing(name.into()))?.iter().copied().collect())
        };
        let standardizer = Standardizer { mean: row("standardizer/mean")?, scale: row("standardizer/scale")? };
        let trainer = PpgTrainer { model, opt_ped1: c.adam("opt1", cfg.train.adam)?, opt_ped2: c.adam("opt2", cfg.train.adam)? };
        Ok(Self {
            trainer,
            standardizer,
            epochs_done: c.meta_parse("epochs_done")?,
            history: serde_json::from_str(c.meta_str("history")?).map_err(|e| PipelineError::Data(e.to_string()))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpcmStageConfig {
    pub model: RpcmConfig,
    pub epochs: u64,
    /// Scenes stacked into one graph batch.
    pub batch_scenes: usize,
    /// Unannotated pairs sampled per annotated triplet in each batch.
    pub background_ratio: f64,
    pub adam: AdamConfig,
}

impl Default for RpcmStageConfig {
    fn default() -> Self {
        // Toy-scale widths and step size; see the README for how they were picked.
        Self {
            model: RpcmConfig { hidden: 32, joint: 32, map_hidden: 32, ..RpcmConfig::default() },
            epochs: 30,
            batch_scenes: 8,
            background_ratio: 2.0,
            adam: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
        }
    }
}

/// One scene's graph with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingScene {
    pub input: RpcmInput,
    /// `(relation row, relation class)` for every ground-truth triplet whose
    /// pair is a candidate.
    pub positives: Vec<(usize, usize)>,
    /// Candidate rows without any ground-truth relation.
    pub background: Vec<usize>,
}

pub fn training_scene(gt: &SceneGraph, view: &ObjectView, pairs: &[(u32, u32)]) -> Result<TrainingScene, PipelineError> {
    let input = build_rpcm_input(&view.graph, &view.class_probs, &view.semantic, pairs)?;
    let mut positives = Vec::new();
    let mut background = Vec::new();
    for (row, pair) in pairs.iter().enumerate() {
        let before = positives.len();
        positives.extend(gt.triplets.iter().filter(|t| t.pair() == *pair).map(|t| (row, t.relation_index)));
        if positives.len() == before {
            background.push(row);
        }
    }
    Ok(TrainingScene { input, positives, background })
}

/// RPCM training state, resumable from a checkpoint.
#[derive(Debug, Clone)]
pub struct RpcmStage {
    pub trainer: RpcmTrainer,
    pub epochs_done: u64,
    pub history: Vec<f64>,
}

impl RpcmStage {
    pub fn init(
        cfg: &RpcmStageConfig,
        object_classes: usize,
        semantic_dim: usize,
        relation_labels: &[String],
        table: &EmbeddingTable,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        if cfg.batch_scenes == 0 || !(cfg.background_ratio >= 0.0) {
            return Err(PipelineError::Config("batch_scenes must be positive and background_ratio non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RPCM_SALT));
        let model = RpcmModel::new(
            cfg.model.clone(),
            entity_input_dim(object_classes, semantic_dim),
            relation_input_dim(object_classes),
            relation_labels,
            table,
            &mut rng,
        )?;
        Ok(Self { trainer: RpcmTrainer::new(model, cfg.adam), epochs_done: 0, history: Vec::new() })
    }

    /// Stacked graph and `(row, prototype label)` samples of one batch.
    fn batch(&self, scenes: &[&TrainingScene], ratio: f64, rng: &mut ChaCha8Rng) -> Result<(RpcmInput, Vec<(usize, usize)>), PipelineError> {
        let model = &self.trainer.model;
        let input = RpcmInput::stack(&scenes.iter().map(|s| &s.input).collect::<Vec<_>>())?;
        let mut samples = Vec::new();
        let mut background = Vec::new();
        let mut offset = 0;
        for s in scenes {
            for &(row, rel) in &s.positives {
                samples.push((offset + row, model.label_for(Some(rel)).expect("relation label")));
            }
            background.extend(s.background.iter().map(|r| offset + r));
            offset += s.input.relation.nrows();
        }
        if let Some(bg) = model.label_for(None) {
            let n = ((ratio * samples.len() as f64).ceil() as usize).min(background.len());
            background.shuffle(rng);
            background.truncate(n);
            background.sort_unstable();
            samples.extend(background.into_iter().map(|r| (r, bg)));
        }
        Ok((input, samples))
    }

    /// Continues training up to epoch `until` (capped at the configured
    /// count). Epoch `n` shuffles with its own derived seed, so a resumed run
    /// retraces an uninterrupted one.
    pub fn train_until(&mut self, scenes: &[TrainingScene], cfg: &RpcmStageConfig, until: u64, seed: u64) -> Result<(), PipelineError> {
        let until = until.min(cfg.epochs);
        let epoch_seed = derive_seed(seed, RPCM_SALT + 1);
        for epoch in self.epochs_done + 1..=until {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, epoch));
            let mut order: Vec<usize> = (0..scenes.len()).collect();
            order.shuffle(&mut rng);
            let (mut total, mut steps) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_scenes) {
                let group: Vec<&TrainingScene> = chunk.iter().map(|&i| &scenes[i]).collect();
                let (input, samples) = self.batch(&group, cfg.background_ratio, &mut rng)?;
                if samples.is_empty() {
                    continue;
                }
                total += self.trainer.train_step(&input, &samples)?.total;
                steps += 1;
            }
            self.history.push(if steps == 0 { 0.0 } else { total / steps as f64 });
            self.epochs_done = epoch;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = &self.trainer.model;
        let mut c = Checkpoint::new(RPCM_KIND);
        c.meta.insert("config".into(), serde_json::to_string(&m.config).expect("config serialises"));
        c.meta.insert("entity_input".into(), m.entity_input.to_string());
        c.meta.insert("relation_input".into(), m.relation_input.to_string());
        c.meta.insert("relation_labels".into(), serde_json::to_string(&m.relation_labels).expect("labels serialise"));
        c.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        c.meta.insert("history".into(), serde_json::to_string(&self.history).expect("floats serialise"));
        c.put_params("model", &m.params);
        c.put_adam("opt", &self.trainer.opt);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, cfg: &RpcmStageConfig) -> Result<Self, PipelineError> {
        c.expect_kind(RPCM_KIND)?;
        let json = |e: serde_json::Error| PipelineError::Data(e.to_string());
        let model = RpcmModel {
            config: serde_json::from_str(c.meta_str("config")?).map_err(json)?,
            entity_input: c.meta_parse("entity_input")?,
            relation_input: c.meta_parse("relation_input")?,
            relation_labels: serde_json::from_str(c.meta_str("relation_labels")?).map_err(json)?,
            params: c.params("model"),
        };
        Ok(Self {
            trainer: RpcmTrainer { model, opt: c.adam("opt", cfg.adam)? },
            epochs_done: c.meta_parse("epochs_done")?,
            history: serde_json::from_str(c.meta_str("history")?).map_err(json)?,
        })
    }
}

/// One scored triplet per candidate pair and relation class. The score is the
/// class probability times both label confidences.
pub fn predict_relations(model: &RpcmModel, view: &ObjectView, pairs: &[(u32, u32)]) -> Result<Vec<Triplet>, PipelineError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let input = build_rpcm_input(&view.graph, &view.class_probs, &view.semantic, pairs)?;
    let preds = model.predict(&input)?;
    let mut out = Vec::with_capacity(pairs.len() * model.relation_labels.len());
    for (k, p) in preds.iter().enumerate() {
        let conf = view.confidence[input.subjects[k]] * view.confidence[input.objects[k]];
        for c in 0..model.relation_labels.len() {
            let proto = model.label_for(Some(c)).expect("relation label");
            out.push(Triplet { subject_id: p.pair.0, object_id: p.pair.1, relation_index: c, score: p.probabilities[proto] * conf });
        }
    }
    Ok(out)
}
