//! Domain data model: oriented object instances, multi-label triplets and
//! per-image scene graphs, plus the annotation text format.

mod annotation;
mod validate;
mod vocab;

use serde::{Deserialize, Serialize};

pub use crate::geometry::{OrientedBox, Point};
pub use annotation::{parse_annotation_file, serialize_annotation, AnnotationError};
pub use validate::{validate_scene_graph, Violation, ViolationKind};
pub use vocab::{CategoryVocabulary, Interaction, VocabError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub class_index: usize,
    #[serde(rename = "corners")]
    pub bbox: OrientedBox,
}

/// One `<subject, relation, object>` assertion. Ground truth carries score 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject_id: u32,
    pub object_id: u32,
    pub relation_index: usize,
    pub score: f64,
}

impl Triplet {
    pub fn ground_truth(subject_id: u32, relation_index: usize, object_id: u32) -> Self {
        Self { subject_id, object_id, relation_index, score: 1.0 }
    }

    pub fn pair(&self) -> (u32, u32) {
        (self.subject_id, self.object_id)
    }
}

/// Objects and triplets of one image, either ground truth or a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_width: f64,
    pub image_height: f64,
    pub objects: Vec<ObjectInstance>,
    pub triplets: Vec<Triplet>,
}

impl SceneGraph {
    pub fn empty(image_width: f64, image_height: f64) -> Self {
        Self { image_width, image_height, objects: Vec::new(), triplets: Vec::new() }
    }

    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        // Ids are list positions for everything this crate builds; fall back to a scan otherwise.
        match self.objects.get(id as usize) {
            Some(o) if o.id == id => Some(o),
            _ => self.objects.iter().find(|o| o.id == id),
        }
    }

    /// Distinct `(subject, object)` pairs carrying at least one triplet, in
    /// first-appearance order.
    pub fn annotated_pairs(&self) -> Vec<(u32, u32)> {
        let mut seen = std::collections::HashSet::new();
        self.triplets.iter().map(Triplet::pair).filter(|p| seen.insert(*p)).collect()
    }

    /// Stable-key-order JSON document used for golden files.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene graphs always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
