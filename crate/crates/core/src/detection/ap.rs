use super::Detection;
use crate::geometry::{box_iou, BoxMode};
use crate::model::ObjectInstance;

/// 11-point interpolated average precision from `(confidence, is_true_positive)`
/// pairs and the number of ground-truth objects.
pub fn voc07_ap(scored: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0.0, 0.0);
    for (_, hit) in &sorted {
        if *hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        curve.push((tp / num_gt as f64, tp / (tp + fp)));
    }
    (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            curve.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Mean of per-class VOC07 AP over classes with ground truth, for one or more
/// images given as `(detections, ground truth)` pairs.
pub fn mean_average_precision(images: &[(Vec<Detection>, Vec<ObjectInstance>)], iou_threshold: f64, mode: BoxMode) -> f64 {
    let classes: std::collections::BTreeSet<usize> =
        images.iter().flat_map(|(_, gt)| gt.iter().map(|o| o.class_index)).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &c in &classes {
        let mut scored = Vec::new();
        let mut num_gt = 0;
        for (dets, gt) in images {
            let gt_c: Vec<&ObjectInstance> = gt.iter().filter(|o| o.class_index == c).collect();
            num_gt += gt_c.len();
            let mut used = vec![false; gt_c.len()];
            let mut ds: Vec<&Detection> = dets.iter().filter(|d| d.class_index == c).collect();
            ds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
            for d in ds {
                let best = gt_c
                    .iter()
                    .enumerate()
                    .map(|(k, g)| (k, box_iou(&d.bbox, &g.bbox, mode).unwrap_or(0.0)))
                    .filter(|&(k, iou)| !used[k] && iou >= iou_threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((k, _)) = best {
                    used[k] = true;
                }
                scored.push((d.confidence, best.is_some()));
            }
        }
        sum += voc07_ap(&scored, num_gt);
    }
    sum / classes.len() as f64
}
