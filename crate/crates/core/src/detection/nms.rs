use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DetectionError;
use crate::geometry::{box_iou, BoxMode, OrientedBox, Point};
use crate::model::CategoryVocabulary;

/// One detected object in global image coordinates. Horizontal detections
/// are stored as axis-aligned oriented boxes and compared in `Hbb` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u32,
    pub bbox: OrientedBox,
    pub class_index: usize,
    pub confidence: f64,
    pub window: u32,
}

fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)).then(a.window.cmp(&b.window))
}

/// Per-class greedy NMS. Candidates are visited by descending confidence;
/// equal confidences go to the lower id. The result is in visiting order and
/// does not depend on input order.
pub fn merge_window_detections(dets: &[Detection], iou_threshold: f64, mode: BoxMode) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<&Detection> = Vec::new();
    for d in order {
        let suppressed = kept.iter().any(|k| {
            k.class_index == d.class_index && box_iou(&k.bbox, &d.bbox, mode).map_or(false, |iou| iou > iou_threshold)
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// One `class score x1 y1 x2 y2 x3 y3 x4 y4` line per detection.
pub fn export_detections(dets: &[Detection], vocab: &CategoryVocabulary) -> String {
    let mut out = String::new();
    for d in dets {
        let name = vocab.object_name(d.class_index).unwrap_or("unknown");
        let _ = write!(out, "{name} {}", d.confidence);
        for p in d.bbox.corners() {
            let _ = write!(out, " {} {}", p.x, p.y);
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`export_detections`]; ids follow line order and windows are 0.
pub fn parse_detections(text: &str, vocab: &CategoryVocabulary) -> Result<Vec<Detection>, DetectionError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| DetectionError::Parse { line: n + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", fields.len())));
        }
        let class_index = vocab.object_index(fields[0]).ok_or_else(|| bad(format!("unknown class `{}`", fields[0])))?;
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if !(0.0..=1.0).contains(&nums[0]) {
            return Err(bad(format!("confidence {} outside [0, 1]", nums[0])));
        }
        let corners = [0, 1, 2, 3].map(|k| Point::new(nums[1 + 2 * k], nums[2 + 2 * k]));
        let bbox = OrientedBox::from_corners_any_winding(corners).map_err(|e| bad(e.to_string()))?;
        out.push(Detection { id: out.len() as u32, bbox, class_index, confidence: nums[0], window: 0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: u32, class_index: usize, x: f64, confidence: f64) -> Detection {
        Detection { id, bbox: OrientedBox::axis_aligned(x, 0.0, x + 10.0, 10.0).unwrap(), class_index, confidence, window: 0 }
    }

    #[test]
    fn single_detection_survives() {
        let d = vec![det(0, 0, 0.0, 0.5)];
        assert_eq!(merge_window_detections(&d, 0.5, BoxMode::Obb), d);
    }

    #[test]
    fn overlapping_same_class_keeps_the_stronger() {
        // IoU of [0,10] and [0.5,10.5] squares: 95/105 ≈ 0.905.
        let d = vec![det(0, 0, 0.5, 0.8), det(1, 0, 0.0, 0.9)];
        let kept = merge_window_detections(&d, 0.5, BoxMode::Obb);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn different_classes_both_survive() {
        let d = vec![det(0, 0, 0.5, 0.8), det(1, 1, 0.0, 0.9)];
        assert_eq!(merge_window_detections(&d, 0.5, BoxMode::Hbb).len(), 2);
    }

    #[test]
    fn ties_go_to_the_lower_id_regardless_of_order() {
        let a = vec![det(3, 0, 0.5, 0.7), det(2, 0, 0.0, 0.7)];
        let b: Vec<_> = a.iter().rev().cloned().collect();
        let ka = merge_window_detections(&a, 0.5, BoxMode::Obb);
        assert_eq!(ka, merge_window_detections(&b, 0.5, BoxMode::Obb));
        assert_eq!(ka[0].id, 2);
    }

    #[test]
    fn export_round_trips() {
        let vocab = CategoryVocabulary::toy();
        let d = vec![det(0, 1, 3.25, 0.875), det(1, 4, 100.0, 0.5)];
        let back = parse_detections(&export_detections(&d, &vocab), &vocab).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let vocab = CategoryVocabulary::toy();
        match parse_detections("ship 0.5 0 0 1 0 1 1 0 1\nship 0.5 0 0", &vocab) {
            Err(DetectionError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
