use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::autodiff::Mat;
use crate::model::SceneGraph;

/// Class-conditioned Gaussian stand-ins for backbone object features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureModel {
    pub dim: usize,
    /// Seeds the per-class means; shared by every scene of a corpus.
    pub seed: u64,
    /// Standard deviation of the per-instance noise.
    pub noise: f64,
}

impl Default for FeatureModel {
    fn default() -> Self {
        Self { dim: 64, seed: 7, noise: 0.5 }
    }
}

impl FeatureModel {
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, class as u64));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// One row per object; the noise of object `k` depends only on
    /// `(scene_seed, id)`, so features follow objects under reordering.
    pub fn object_features(&self, scene: &SceneGraph, scene_seed: u64) -> Mat {
        let mut out = Mat::zeros((scene.objects.len(), self.dim));
        for (row, o) in scene.objects.iter().enumerate() {
            let mean = self.class_mean(o.class_index);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.seed, scene_seed), 1 << 32 | o.id as u64));
            for (j, m) in mean.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[[row, j]] = m + self.noise * z;
            }
        }
        out
    }
}
