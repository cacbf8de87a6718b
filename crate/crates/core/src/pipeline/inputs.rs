//! Entity and relation rows fed to the relation predictor.

use super::PipelineError;
use crate::autodiff::Mat;
use crate::geometry::{boundary_gap, pair_spatial_feature, GeometryError, OrientedBox, PAIR_SPATIAL_DIM};
use crate::model::SceneGraph;
use crate::rpcm::RpcmInput;

/// Geometry columns per entity: `cx/W, cy/H, ln(w/s), ln(h/s), sin 2θ, cos 2θ`
/// with `s = √(WH)`.
pub const ENTITY_GEOMETRY_DIM: usize = 6;

pub fn entity_input_dim(object_classes: usize, semantic_dim: usize) -> usize {
    object_classes + semantic_dim + ENTITY_GEOMETRY_DIM
}

/// Spatial pair feature, boundary gap, both orientations and both class
/// distributions.
pub fn relation_input_dim(object_classes: usize) -> usize {
    PAIR_SPATIAL_DIM + 1 + 4 + 2 * object_classes
}

fn orientation(b: &OrientedBox) -> [f64; 2] {
    let t = 2.0 * b.angle();
    [t.sin(), t.cos()]
}

fn entity_row(graph: &SceneGraph, b: &OrientedBox) -> [f64; ENTITY_GEOMETRY_DIM] {
    let (w, h) = (graph.image_width, graph.image_height);
    let s = (w * h).sqrt();
    let c = b.center();
    let [sn, cs] = orientation(b);
    [c.x / w, c.y / h, (b.width() / s).ln(), (b.height() / s).ln(), sn, cs]
}

/// One row per object of `graph`; `class_probs` and `semantic` are aligned
/// with `graph.objects`.
pub fn entity_features(graph: &SceneGraph, class_probs: &Mat, semantic: &Mat) -> Mat {
    let n = graph.objects.len();
    let (c, d) = (class_probs.ncols(), semantic.ncols());
    let mut out = Mat::zeros((n, c + d + ENTITY_GEOMETRY_DIM));
    for (i, o) in graph.objects.iter().enumerate() {
        let mut row = out.row_mut(i);
        for j in 0..c {
            row[j] = class_probs[[i, j]];
        }
        for j in 0..d {
            row[c + j] = semantic[[i, j]];
        }
        for (j, v) in entity_row(graph, &o.bbox).into_iter().enumerate() {
            row[c + d + j] = v;
        }
    }
    out
}

/// One row per `(subject, object)` position pair.
pub fn relation_features(graph: &SceneGraph, class_probs: &Mat, pairs: &[(usize, usize)]) -> Result<Mat, GeometryError> {
    let c = class_probs.ncols();
    let diag = graph.image_width.hypot(graph.image_height);
    let mut out = Mat::zeros((pairs.len(), relation_input_dim(c)));
    for (k, &(s, o)) in pairs.iter().enumerate() {
        let (bs, bo) = (&graph.objects[s].bbox, &graph.objects[o].bbox);
        let sp = pair_spatial_feature(bs, bo, graph.image_width, graph.image_height)?;
        let mut v: Vec<f64> = sp.as_slice().to_vec();
        v.push(boundary_gap(bs, bo) / diag);
        v.extend(orientation(bs));
        v.extend(orientation(bo));
        v.extend(class_probs.row(s).iter());
        v.extend(class_probs.row(o).iter());
        out.row_mut(k).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(out)
}

/// Position of each candidate pair's objects, in pair order.
pub fn pair_positions(graph: &SceneGraph, pairs: &[(u32, u32)]) -> Option<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|&(s, o)| {
            let find = |id: u32| graph.objects.iter().position(|x| x.id == id);
            Some((find(s)?, find(o)?))
        })
        .collect()
}

/// Graph for one scene over the candidate `pairs` (object ids).
pub fn build_rpcm_input(graph: &SceneGraph, class_probs: &Mat, semantic: &Mat, pairs: &[(u32, u32)]) -> Result<RpcmInput, PipelineError> {
    let pos = pair_positions(graph, pairs).ok_or_else(|| PipelineError::Data("candidate pair references a missing object".into()))?;
    Ok(RpcmInput {
        entity: entity_features(graph, class_probs, semantic),
        relation: relation_features(graph, class_probs, &pos)?,
        subjects: pos.iter().map(|p| p.0).collect(),
        objects: pos.iter().map(|p| p.1).collect(),
        pairs: pairs.to_vec(),
    })
}

/// Every ordered pair of distinct objects, by id.
pub fn all_pairs(graph: &SceneGraph) -> Vec<(u32, u32)> {
    let ids: Vec<u32> = graph.objects.iter().map(|o| o.id).collect();
    ids.iter().flat_map(|&s| ids.iter().filter(move |&&o| o != s).map(move |&o| (s, o))).collect()
}

/// One-hot rows of the ground-truth labels.
pub fn one_hot_classes(graph: &SceneGraph, classes: usize) -> Mat {
    let mut out = Mat::zeros((graph.objects.len(), classes));
    for (i, o) in graph.objects.iter().enumerate() {
        out[[i, o.class_index]] = 1.0;
    }
    out
}
