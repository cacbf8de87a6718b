use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::geometry::{pair_spatial_feature, GeometryError, PAIR_SPATIAL_DIM};
use crate::model::SceneGraph;

/// `d_X` for object features of width `semantic_dim`.
pub fn pair_feature_dim(semantic_dim: usize) -> usize {
    PAIR_SPATIAL_DIM + 2 * semantic_dim
}

/// Spatial feature of `(subject, object)` followed by both semantic rows.
/// `subject` and `object` are positions in `scene.objects`.
pub fn pair_feature_x(scene: &SceneGraph, semantic: &Mat, subject: usize, object: usize) -> Result<Vec<f64>, GeometryError> {
    let sp = pair_spatial_feature(
        &scene.objects[subject].bbox,
        &scene.objects[object].bbox,
        scene.image_width,
        scene.image_height,
    )?;
    let mut x = Vec::with_capacity(pair_feature_dim(semantic.ncols()));
    x.extend_from_slice(sp.as_slice());
    x.extend(semantic.row(subject).iter());
    x.extend(semantic.row(object).iter());
    Ok(x)
}

/// One row per `(subject, object)` position pair.
pub fn pair_feature_matrix(scene: &SceneGraph, semantic: &Mat, pairs: &[(usize, usize)]) -> Result<Mat, GeometryError> {
    let d = pair_feature_dim(semantic.ncols());
    let mut out = Mat::zeros((pairs.len(), d));
    for (i, &(s, o)) in pairs.iter().enumerate() {
        let x = pair_feature_x(scene, semantic, s, o)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&x));
    }
    Ok(out)
}

/// Per-column affine normalisation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and standard deviations; near-constant columns keep scale 1.
    pub fn fit(x: &Mat) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let scale = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean: mean.to_vec(), scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}
