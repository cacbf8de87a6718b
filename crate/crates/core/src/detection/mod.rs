//! Training machinery for a multi-scale oriented detector: pyramid planning,
//! the layered detection losses with per-class adaptive weights, cross-window
//! merging and a tiny stand-in scorer.

mod ap;
mod dip;
mod loss;
mod nms;
mod scorer;

pub use ap::{mean_average_precision, voc07_ap};
pub use dip::{build_dip, build_dip_with, DipConfig, DipLayer, DipSpec, Window, MIN_LAYER_SIDE};
pub use loss::{
    detection_total_loss, hierarchical_cls_loss, hierarchical_cls_loss_grad, smooth_l1, update_class_weights,
    ClsLossGrad, LayerBatch, PositiveSample, CLASS_WEIGHT_INIT, CLASS_WEIGHT_MAX, CLASS_WEIGHT_MIN,
};
pub use nms::{export_detections, merge_window_detections, parse_detections, Detection};
pub use scorer::{Detector, ScorerBatch, ScorerConfig, TinyScorer, CLASS_WEIGHT_PARAM};

#[derive(Debug, thiserror::Error)]
pub enum DetectionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
