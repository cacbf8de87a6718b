//! Multi-label recall metrics over ranked triplet predictions.

mod report;


use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{EvalReport, ImageBreakdown, KMetrics};

use crate::geometry::{box_iou, BoxMode, OrientedBox};
use crate::model::{SceneGraph, Triplet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("image `{image}`: {msg}")]
    Input { image: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Ground-truth boxes and labels are given; only relations are predicted.
    #[serde(alias = "predcls")]
    PredCls,
    /// Ground-truth boxes are given; labels and relations are predicted.
    #[serde(rename = "SGCls", alias = "sgcls")]
    SgCls,
    /// Everything comes from the detector.
    #[serde(rename = "SGDet", alias = "sgdet")]
    SgDet,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::PredCls, Task::SgCls, Task::SgDet];

    pub fn name(self) -> &'static str {
        match self {
            Task::PredCls => "PredCls",
            Task::SgCls => "SGCls",
            Task::SgDet => "SGDet",
        }
    }

    /// Whether object labels take part in matching.
    pub fn checks_labels(self) -> bool {
        self != Task::PredCls
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::Config(format!("unknown task `{s}` (PredCls, SGCls, SGDet)")))
    }
}

/// How recall is pooled over images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Total recalled over total ground truth.
    #[default]
    Micro,
    /// Mean of per-image recall over images with ground truth.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub task: Task,
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
    pub box_mode: BoxMode,
    #[serde(default)]
    pub averaging: Averaging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { task: Task::PredCls, ks: vec![1500, 2000], iou_threshold: 0.5, box_mode: BoxMode::Obb, averaging: Averaging::Micro }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Config(format!("K values must be positive, got {:?}", self.ks)));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::Config(format!("IoU threshold {} outside (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// A triplet with the classes and boxes of both ends resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedTriplet {
    pub subject_class: usize,
    pub subject_box: OrientedBox,
    pub relation: usize,
    pub object_class: usize,
    pub object_box: OrientedBox,
}

impl GroundedTriplet {
    pub fn resolve(graph: &SceneGraph, t: &Triplet) -> Option<Self> {
        let s = graph.object(t.subject_id)?;
        let o = graph.object(t.object_id)?;
        Some(Self {
            subject_class: s.class_index,
            subject_box: s.bbox.clone(),
            relation: t.relation_index,
            object_class: o.class_index,
            object_box: o.bbox.clone(),
        })
    }
}

/// Relation equal, labels equal when `check_labels`, and both boxes at or
/// above the IoU threshold.
pub fn match_triplet(pred: &GroundedTriplet, gt: &GroundedTriplet, iou_threshold: f64, mode: BoxMode, check_labels: bool) -> bool {
    if pred.relation != gt.relation {
        return false;
    }
    if check_labels && (pred.subject_class != gt.subject_class || pred.object_class != gt.object_class) {
        return false;
    }
    let iou = |a: &OrientedBox, b: &OrientedBox| box_iou(a, b, mode).unwrap_or(0.0);
    iou(&pred.subject_box, &gt.subject_box) >= iou_threshold && iou(&pred.object_box, &gt.object_box) >= iou_threshold
}

/// Ranking order: score descending, then `(subject, object)`, then relation.
pub fn ranking_order(a: &Triplet, b: &Triplet) -> Ordering {
    b.score.total_cmp(&a.score).then(a.pair().cmp(&b.pair())).then(a.relation_index.cmp(&b.relation_index))
}

/// Indices of `triplets` in ranking order.
pub fn rank_triplets(triplets: &[Triplet]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..triplets.len()).collect();
    idx.sort_by(|&i, &j| ranking_order(&triplets[i], &triplets[j]));
    idx
}

/// One image's ground truth and prediction.
#[derive(Debug, Clone, Copy)]
pub struct ImageEval<'a> {
    pub name: &'a str,
    pub gt: &'a SceneGraph,
    pub pred: &'a SceneGraph,
}

/// For every K (ascending order of `ks` as given), which ground-truth triplets
/// of the image are recalled by greedy one-to-one assignment.
pub fn recalled_per_k(image: &ImageEval<'_>, cfg: &EvalConfig) -> Result<Vec<Vec<bool>>, EvalError> {
    let err = |msg: String| EvalError::Input { image: image.name.to_string(), msg };
    let gt: Vec<GroundedTriplet> = image
        .gt
        .triplets
        .iter()
        .map(|t| GroundedTriplet::resolve(image.gt, t).ok_or_else(|| err("ground-truth triplet references a missing object".into())))
        .collect::<Result<_, _>>()?;
    let order = rank_triplets(&image.pred.triplets);
    let kmax = cfg.ks.iter().copied().max().unwrap_or(0);
    let mut assigned: Vec<Option<usize>> = vec![None; gt.len()];
    for (rank, &i) in order.iter().take(kmax).enumerate() {
        let t = &image.pred.triplets[i];
        let p = GroundedTriplet::resolve(image.pred, t).ok_or_else(|| err("predicted triplet references a missing object".into()))?;
        if let Some(g) = (0..gt.len())
            .find(|&g| assigned[g].is_none() && match_triplet(&p, &gt[g], cfg.iou_threshold, cfg.box_mode, cfg.task.checks_labels()))
        {
            assigned[g] = Some(rank);
        }
    }
    Ok(cfg.ks.iter().map(|&k| assigned.iter().map(|a| a.is_some_and(|r| r < k)).collect()).collect())
}

fn check_task_inputs(image: &ImageEval<'_>, task: Task) -> Result<(), EvalError> {
    let err = |msg: &str| EvalError::Input { image: image.name.to_string(), msg: msg.to_string() };
    let same_boxes = image.gt.objects.len() == image.pred.objects.len()
        && image.gt.objects.iter().zip(&image.pred.objects).all(|(g, p)| g.id == p.id && g.bbox == p.bbox);
    match task {
        Task::PredCls => {
            let same_labels = image.gt.objects.iter().zip(&image.pred.objects).all(|(g, p)| g.class_index == p.class_index);
            if !(same_boxes && same_labels) {
                return Err(err("PredCls predictions must carry the ground-truth boxes and labels"));
            }
        }
        Task::SgCls => {
            if !same_boxes {
                return Err(err("SGCls predictions must carry the ground-truth boxes"));
            }
        }
        Task::SgDet => {
            if image.pred.objects.is_empty() && !image.pred.triplets.is_empty() {
                return Err(err("SGDet predictions need detected objects"));
            }
        }
    }
    Ok(())
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// `2·MR·mMR / (MR + mMR)`, zero when both are zero.
pub fn hmr_at_k(mr: f64, mmr: f64) -> f64 {
    if mr + mmr == 0.0 {
        0.0
    } else {
        2.0 * mr * mmr / (mr + mmr)
    }
}

/// Full report for a corpus. `relation_names` sizes the per-class vectors.
pub fn evaluate_task(images: &[ImageEval<'_>], relation_names: &[String], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let classes = relation_names.len();
    for im in images {
        check_task_inputs(im, cfg.task)?;
        if let Some(t) = im.gt.triplets.iter().chain(&im.pred.triplets).find(|t| t.relation_index >= classes) {
            return Err(EvalError::Input { image: im.name.to_string(), msg: format!("relation index {} out of range", t.relation_index) });
        }
    }
    let recalled: Vec<Vec<Vec<bool>>> = images.par_iter().map(|im| recalled_per_k(im, cfg)).collect::<Result<_, _>>()?;

    let mut gt_per_class = vec![0usize; classes];
    for im in images {
        for t in &im.gt.triplets {
            gt_per_class[t.relation_index] += 1;
        }
    }
    let total_gt: usize = gt_per_class.iter().sum();
    let mut metrics = Vec::new();
    for (ki, &k) in cfg.ks.iter().enumerate() {
        let mut hit_per_class = vec![0usize; classes];
        let mut per_image = Vec::new();
        for (im, rec) in images.iter().zip(&recalled) {
            let hits = &rec[ki];
            for (t, &h) in im.gt.triplets.iter().zip(hits) {
                if h {
                    hit_per_class[t.relation_index] += 1;
                }
            }
            if !hits.is_empty() {
                per_image.push(percent(hits.iter().filter(|&&h| h).count(), hits.len()));
            }
        }
        let mr = match cfg.averaging {
            Averaging::Micro => percent(hit_per_class.iter().sum(), total_gt),
            Averaging::Macro if per_image.is_empty() => 0.0,
            Averaging::Macro => per_image.iter().sum::<f64>() / per_image.len() as f64,
        };
        let per_class_recall: Vec<Option<f64>> =
            (0..classes).map(|c| (gt_per_class[c] > 0).then(|| percent(hit_per_class[c], gt_per_class[c]))).collect();
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let mmr = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
        metrics.push(KMetrics { k, mr, mmr, hmr: hmr_at_k(mr, mmr), per_class_recall });
    }
    let images = images
        .iter()
        .zip(&recalled)
        .map(|(im, rec)| ImageBreakdown {
            image: im.name.to_string(),
            ground_truth: im.gt.triplets.len(),
            predictions: im.pred.triplets.len(),
            recalled: rec.iter().map(|h| h.iter().filter(|&&x| x).count()).collect(),
        })
        .collect();
    Ok(EvalReport { config: cfg.clone(), relation_names: relation_names.to_vec(), gt_per_class, metrics, images })
}

/// MR@K alone.
pub fn mr_at_k(images: &[ImageEval<'_>], relation_names: &[String], k: usize, cfg: &EvalConfig) -> Result<f64, EvalError> {
    let cfg = EvalConfig { ks: vec![k], ..cfg.clone() };
    Ok(evaluate_task(images, relation_names, &cfg)?.metrics[0].mr)
}

/// mMR@K alone.
pub fn mmr_at_k(images: &[ImageEval<'_>], relation_names: &[String], k: usize, cfg: &EvalConfig) -> Result<f64, EvalError> {
    let cfg = EvalConfig { ks: vec![k], ..cfg.clone() };
    Ok(evaluate_task(images, relation_names, &cfg)?.metrics[0].mmr)
}
