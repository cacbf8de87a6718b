//! Object stage for SGCls and SGDet. There are no pixels here: proposals are
//! jittered ground-truth boxes plus clutter, assigned to pyramid windows, and
//! their features come from the synthetic feature model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ObjectView, PipelineError};
use crate::autodiff::Mat;
use crate::checkpoint::Checkpoint;
use crate::detection::{build_dip_with, merge_window_detections, Detection, Detector, DipConfig, DipSpec, ScorerBatch, ScorerConfig, TinyScorer};
use crate::geometry::{wrap_half_pi, BoxMode, GeometryError, OrientedBox, RotatedRect};
use crate::model::{ObjectInstance, SceneGraph};
use crate::nn::{Adam, AdamConfig};
use crate::synth::{derive_seed, FeatureModel, SyntheticScene};

pub const DETECTOR_KIND: &str = "detector";
/// `dx/w, dy/h, ln(w*/w), ln(h*/h), Δθ`.
pub const REGRESSION_DIM: usize = 5;
const BOX_FEATURES: usize = 3;
const DETECTOR_SALT: u64 = 0x4445_5443;
/// Proposals for training and for inference come from different streams.
const TRAIN_STREAM: u64 = 1;
const INFER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorStageConfig {
    pub dip: DipConfig,
    pub hidden: usize,
    pub epochs: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Centre jitter of true proposals, as a fraction of the box size.
    pub center_jitter: f64,
    /// Relative size jitter of true proposals.
    pub size_jitter: f64,
    pub angle_jitter_deg: f64,
    /// Clutter proposals per image.
    pub false_positives: usize,
    /// Extra feature noise on every proposal.
    pub feature_noise: f64,
    pub nms_iou: f64,
    pub box_mode: BoxMode,
}

impl Default for DetectorStageConfig {
    fn default() -> Self {
        Self {
            dip: DipConfig { layers: 3, window: 512, stride: 384, s_min: 32.0 },
            hidden: 32,
            epochs: 15,
            batch_size: 256,
            adam: AdamConfig { learning_rate: 5e-3, ..AdamConfig::default() },
            center_jitter: 0.08,
            size_jitter: 0.1,
            angle_jitter_deg: 4.0,
            false_positives: 6,
            feature_noise: 0.3,
            nms_iou: 0.5,
            box_mode: BoxMode::Obb,
        }
    }
}

/// One candidate box seen in one pyramid window.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: OrientedBox,
    pub layer: usize,
    pub window: u32,
    /// Scorer input: semantic features then box shape.
    pub features: Vec<f64>,
    /// Object class, or the number of object classes for clutter.
    pub target: usize,
    pub reg_target: Option<[f64; REGRESSION_DIM]>,
}

pub fn regression_target(proposal: &OrientedBox, gt: &OrientedBox) -> [f64; REGRESSION_DIM] {
    let (p, g) = (proposal.rotated_rect(), gt.rotated_rect());
    [
        (g.cx - p.cx) / p.width,
        (g.cy - p.cy) / p.height,
        (g.width / p.width).ln(),
        (g.height / p.height).ln(),
        wrap_half_pi(g.angle - p.angle),
    ]
}

/// Inverse of [`regression_target`].
pub fn decode_box(proposal: &OrientedBox, reg: &[f64]) -> Result<OrientedBox, GeometryError> {
    let p = proposal.rotated_rect();
    OrientedBox::from_rotated_rect(RotatedRect {
        cx: p.cx + reg[0] * p.width,
        cy: p.cy + reg[1] * p.height,
        width: p.width * reg[2].exp(),
        height: p.height * reg[3].exp(),
        angle: p.angle + reg[4],
    })
}

fn box_features(b: &OrientedBox, graph: &SceneGraph) -> [f64; BOX_FEATURES] {
    let s = (graph.image_width * graph.image_height).sqrt();
    [(b.width() / s).ln(), (b.height() / s).ln(), (b.width() / b.height()).ln()]
}

fn scorer_input(semantic: impl Iterator<Item = f64>, b: &OrientedBox, graph: &SceneGraph) -> Vec<f64> {
    semantic.chain(box_features(b, graph)).collect()
}

fn dip_for(graph: &SceneGraph, cfg: &DetectorStageConfig) -> Result<DipSpec, PipelineError> {
    Ok(build_dip_with(graph.image_width.ceil() as u32, graph.image_height.ceil() as u32, &cfg.dip)?)
}

/// Proposals of one scene. `stream` separates training from inference draws.
pub fn generate_proposals(
    scene: &SyntheticScene,
    features: &FeatureModel,
    object_classes: usize,
    cfg: &DetectorStageConfig,
    stream: u64,
) -> Result<Vec<Proposal>, PipelineError> {
    let g = &scene.graph;
    let dip = dip_for(g, cfg)?;
    let windows = dip.windows();
    let semantic = features.object_features(g, scene.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(scene.seed, DETECTOR_SALT), stream));
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut out = Vec::new();
    for (k, o) in g.objects.iter().enumerate() {
        let layer = dip.layer_for_size(o.bbox.max_side());
        let scale = dip.layer(layer).scale;
        let c = o.bbox.center();
        let (lx, ly) = (c.x / scale, c.y / scale);
        for w in windows.iter().filter(|w| w.layer == layer) {
            if !(lx >= w.x0 as f64 && lx < w.x1 as f64 && ly >= w.y0 as f64 && ly < w.y1 as f64) {
                continue;
            }
            let r = o.bbox.rotated_rect();
            let jittered = OrientedBox::from_rotated_rect(RotatedRect {
                cx: r.cx + cfg.center_jitter * r.width * normal(&mut rng),
                cy: r.cy + cfg.center_jitter * r.height * normal(&mut rng),
                width: r.width * (cfg.size_jitter * normal(&mut rng)).exp(),
                height: r.height * (cfg.size_jitter * normal(&mut rng)).exp(),
                angle: r.angle + cfg.angle_jitter_deg.to_radians() * normal(&mut rng),
            })?;
            let feats: Vec<f64> = semantic.row(k).iter().map(|v| v + cfg.feature_noise * normal(&mut rng)).collect();
            out.push(Proposal {
                features: scorer_input(feats.into_iter(), &jittered, g),
                reg_target: Some(regression_target(&jittered, &o.bbox)),
                bbox: jittered,
                layer,
                window: w.id,
                target: o.class_index,
            });
        }
    }
    let clutter = features.class_mean(object_classes);
    for _ in 0..cfg.false_positives {
        let side = rng.gen_range(10.0..120.0);
        let b = OrientedBox::from_rotated_rect(RotatedRect {
            cx: rng.gen_range(0.0..g.image_width),
            cy: rng.gen_range(0.0..g.image_height),
            width: side,
            height: side * rng.gen_range(0.3..1.0),
            angle: rng.gen_range(-1.5..1.5),
        })?;
        let layer = dip.layer_for_size(b.max_side());
        let c = b.center();
        let scale = dip.layer(layer).scale;
        let window = windows
            .iter()
            .find(|w| w.layer == layer && c.x / scale >= w.x0 as f64 && c.x / scale < w.x1 as f64 && c.y / scale >= w.y0 as f64 && c.y / scale < w.y1 as f64)
            .map_or(0, |w| w.id);
        let feats: Vec<f64> = clutter.iter().map(|m| m + (features.noise + cfg.feature_noise) * normal(&mut rng)).collect();
        out.push(Proposal {
            features: scorer_input(feats.into_iter(), &b, g),
            bbox: b,
            layer,
            window,
            target: object_classes,
            reg_target: None,
        });
    }
    Ok(out)
}

/// Trained scorer plus the settings it runs with.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDetector {
    pub scorer: TinyScorer,
    pub config: DetectorStageConfig,
    pub object_classes: usize,
}

fn feature_matrix(rows: &[Vec<f64>], width: usize) -> Mat {
    Mat::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j])
}

impl ObjectDetector {
    fn check(&self, width: usize) -> Result<(), PipelineError> {
        let c = &self.scorer.config;
        if c.input != width || c.layers != self.config.dip.layers || c.classes != self.object_classes + 1 {
            return Err(PipelineError::Config(format!(
                "detector checkpoint ({} inputs, {} layers, {} classes) does not fit the run ({width} inputs, {} layers, {} classes)",
                c.input,
                c.layers,
                c.classes,
                self.config.dip.layers,
                self.object_classes + 1
            )));
        }
        Ok(())
    }

    /// Object-class distribution (clutter removed and renormalised) per row.
    fn object_probs(&self, probs: &Mat) -> Mat {
        let c = self.object_classes;
        let mut out = probs.slice(ndarray::s![.., ..c]).to_owned();
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        out
    }

    /// Relabels ground-truth boxes; boxes stay untouched.
    pub fn classify(&self, gt: &ObjectView) -> Result<ObjectView, PipelineError> {
        let g = &gt.graph;
        if g.objects.is_empty() {
            return Ok(gt.clone());
        }
        let dip = dip_for(g, &self.config)?;
        let rows: Vec<Vec<f64>> = g.objects.iter().enumerate().map(|(i, o)| scorer_input(gt.semantic.row(i).iter().copied(), &o.bbox, g)).collect();
        let width = rows[0].len();
        self.check(width)?;
        let layers: Vec<usize> = g.objects.iter().map(|o| dip.layer_for_size(o.bbox.max_side())).collect();
        let (_, probs, _) = self.scorer.score(&feature_matrix(&rows, width), &layers);
        let class_probs = self.object_probs(&probs);
        let mut graph = g.clone();
        let mut confidence = Vec::with_capacity(rows.len());
        for (i, o) in graph.objects.iter_mut().enumerate() {
            let row = class_probs.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            o.class_index = best;
            confidence.push(row[best]);
        }
        Ok(ObjectView { graph, class_probs, semantic: gt.semantic.clone(), confidence })
    }

    /// Simulated detection: score proposals, refine boxes, drop clutter and
    /// merge duplicates across windows with per-class NMS.
    pub fn detect(&self, scene: &SyntheticScene, features: &FeatureModel) -> Result<ObjectView, PipelineError> {
        let g = &scene.graph;
        let props = generate_proposals(scene, features, self.object_classes, &self.config, INFER_STREAM)?;
        let empty = |w: usize| ObjectView {
            graph: SceneGraph::empty(g.image_width, g.image_height),
            class_probs: Mat::zeros((0, self.object_classes)),
            semantic: Mat::zeros((0, w)),
            confidence: Vec::new(),
        };
        if props.is_empty() {
            return Ok(empty(features.dim));
        }
        let width = props[0].features.len();
        self.check(width)?;
        let rows: Vec<Vec<f64>> = props.iter().map(|p| p.features.clone()).collect();
        let layers: Vec<usize> = props.iter().map(|p| p.layer).collect();
        let (_, probs, reg) = self.scorer.score(&feature_matrix(&rows, width), &layers);
        let mut dets = Vec::new();
        for (i, p) in props.iter().enumerate() {
            let row = probs.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            if best == self.object_classes {
                continue;
            }
            let Ok(bbox) = decode_box(&p.bbox, &reg.row(i).to_vec()) else { continue };
            dets.push(Detection { id: i as u32, bbox, class_index: best, confidence: row[best], window: p.window });
        }
        let kept = merge_window_detections(&dets, self.config.nms_iou, self.config.box_mode);
        let sem_dim = width - BOX_FEATURES;
        let mut view = empty(sem_dim);
        let mut semantic = Mat::zeros((kept.len(), sem_dim));
        let mut sel = Mat::zeros((kept.len(), probs.ncols()));
        for (k, d) in kept.iter().enumerate() {
            let i = d.id as usize;
            view.graph.objects.push(ObjectInstance { id: k as u32, class_index: d.class_index, bbox: d.bbox });
            view.confidence.push(d.confidence);
            semantic.row_mut(k).assign(&ndarray::ArrayView1::from(&props[i].features[..sem_dim]));
            sel.row_mut(k).assign(&probs.row(i));
        }
        view.class_probs = self.object_probs(&sel);
        view.semantic = semantic;
        Ok(view)
    }
}

/// Detector training state, resumable from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorStage {
    pub detector: ObjectDetector,
    pub opt: Adam,
    pub epochs_done: u64,
    pub history: Vec<f64>,
}

impl DetectorStage {
    /// Training proposals of `scenes`, in scene order.
    pub fn training_proposals(
        scenes: &[SyntheticScene],
        features: &FeatureModel,
        object_classes: usize,
        cfg: &DetectorStageConfig,
    ) -> Result<Vec<Proposal>, PipelineError> {
        let mut out = Vec::new();
        for s in scenes {
            out.extend(generate_proposals(s, features, object_classes, cfg, TRAIN_STREAM)?);
        }
        Ok(out)
    }

    pub fn init(cfg: &DetectorStageConfig, object_classes: usize, semantic_dim: usize, seed: u64) -> Result<Self, PipelineError> {
        if cfg.batch_size == 0 || cfg.hidden == 0 {
            return Err(PipelineError::Config("detector batch_size and hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DETECTOR_SALT));
        let sc = ScorerConfig {
            input: semantic_dim + BOX_FEATURES,
            hidden: cfg.hidden,
            classes: object_classes + 1,
            regression: REGRESSION_DIM,
            layers: cfg.dip.layers,
        };
        Ok(Self {
            detector: ObjectDetector { scorer: TinyScorer::new(sc, &mut rng), config: *cfg, object_classes },
            opt: Adam::new(cfg.adam),
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    pub fn train_until(&mut self, proposals: &[Proposal], until: u64, seed: u64) -> Result<(), PipelineError> {
        let cfg = self.detector.config;
        let until = until.min(cfg.epochs);
        if proposals.is_empty() && until > self.epochs_done {
            return Err(PipelineError::Data("no proposals to train the detector on".into()));
        }
        let epoch_seed = derive_seed(seed, DETECTOR_SALT + 1);
        for epoch in self.epochs_done + 1..=until {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, epoch));
            let mut order: Vec<usize> = (0..proposals.len()).collect();
            order.shuffle(&mut rng);
            let (mut total, mut steps) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let width = proposals[chunk[0]].features.len();
                let batch = ScorerBatch {
                    features: Mat::from_shape_fn((chunk.len(), width), |(i, j)| proposals[chunk[i]].features[j]),
                    layers: chunk.iter().map(|&i| proposals[i].layer).collect(),
                    targets: chunk.iter().map(|&i| proposals[i].target).collect(),
                    reg_targets: Mat::from_shape_fn((chunk.len(), REGRESSION_DIM), |(i, j)| {
                        proposals[chunk[i]].reg_target.map_or(0.0, |t| t[j])
                    }),
                    positives: chunk.iter().enumerate().filter(|(_, &i)| proposals[i].reg_target.is_some()).map(|(k, _)| (k, 1.0)).collect(),
                };
                total += self.detector.scorer.train_step(&mut self.opt, &batch, cfg.box_mode);
                steps += 1;
            }
            self.history.push(total / steps.max(1) as f64);
            self.epochs_done = epoch;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(DETECTOR_KIND);
        c.meta.insert("scorer".into(), serde_json::to_string(&self.detector.scorer.config).expect("config serialises"));
        c.meta.insert("object_classes".into(), self.detector.object_classes.to_string());
        c.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        c.meta.insert("history".into(), serde_json::to_string(&self.history).expect("floats serialise"));
        c.put_params("model", &self.detector.scorer.params);
        c.put_adam("opt", &self.opt);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, cfg: &DetectorStageConfig) -> Result<Self, PipelineError> {
        c.expect_kind(DETECTOR_KIND)?;
        let json = |e: serde_json::Error| PipelineError::Data(e.to_string());
        let scorer = TinyScorer { config: serde_json::from_str(c.meta_str("scorer")?).map_err(json)?, params: c.params("model") };
        Ok(Self {
            detector: ObjectDetector { scorer, config: *cfg, object_classes: c.meta_parse("object_classes")? },
            opt: c.adam("opt", cfg.adam)?,
            epochs_done: c.meta_parse("epochs_done")?,
            history: serde_json::from_str(c.meta_str("history")?).map_err(json)?,
        })
    }
}
