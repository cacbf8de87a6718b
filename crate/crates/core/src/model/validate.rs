use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CategoryVocabulary, SceneGraph};

/// Fraction of the image size by which box corners may overhang the border.
pub const BORDER_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DuplicateObjectId,
    InvalidObjectClass,
    OutOfBounds,
    DanglingReference,
    SelfLoop,
    InvalidRelation,
    DuplicateTriplet,
    ScoreOutOfRange,
    /// Warning level: the combination is absent from the interaction map.
    InadmissibleCombination,
}

impl ViolationKind {
    pub fn is_structural(self) -> bool {
        self != ViolationKind::InadmissibleCombination
    }

    pub fn rule(self) -> &'static str {
        match self {
            ViolationKind::DuplicateObjectId => "duplicate object id",
            ViolationKind::InvalidObjectClass => "invalid object class",
            ViolationKind::OutOfBounds => "box outside image bounds",
            ViolationKind::DanglingReference => "dangling object reference",
            ViolationKind::SelfLoop => "self-loop",
            ViolationKind::InvalidRelation => "invalid relation class",
            ViolationKind::DuplicateTriplet => "duplicate triplet",
            ViolationKind::ScoreOutOfRange => "score outside [0, 1]",
            ViolationKind::InadmissibleCombination => "inadmissible combination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending element, e.g. `object 3` or `triplet 7`.
    pub element: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.rule(), self.element)
    }
}

pub fn validate_scene_graph(g: &SceneGraph, vocab: &CategoryVocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, element: String| out.push(Violation { kind, element });

    let (w, h) = (g.image_width, g.image_height);
    let x_range = (-BORDER_SLACK * w, (1.0 + BORDER_SLACK) * w);
    let y_range = (-BORDER_SLACK * h, (1.0 + BORDER_SLACK) * h);
    let mut ids = HashSet::new();
    for (i, o) in g.objects.iter().enumerate() {
        if !ids.insert(o.id) {
            push(ViolationKind::DuplicateObjectId, format!("object {i} (id {})", o.id));
        }
        if o.class_index >= vocab.num_objects() {
            push(ViolationKind::InvalidObjectClass, format!("object {i} (class index {})", o.class_index));
        }
        let outside = o.bbox.corners().iter().any(|p| {
            p.x < x_range.0 || p.x > x_range.1 || p.y < y_range.0 || p.y > y_range.1
        });
        if outside {
            push(ViolationKind::OutOfBounds, format!("object {i}"));
        }
    }

    let mut seen = HashSet::new();
    for (i, t) in g.triplets.iter().enumerate() {
        let elem = format!("triplet {i}");
        if t.subject_id == t.object_id {
            push(ViolationKind::SelfLoop, elem.clone());
        }
        let subject = g.object(t.subject_id);
        let object = g.object(t.object_id);
        if subject.is_none() || object.is_none() {
            push(ViolationKind::DanglingReference, elem.clone());
        }
        let relation_ok = t.relation_index < vocab.num_relations();
        if !relation_ok {
            push(ViolationKind::InvalidRelation, elem.clone());
        }
        if !(0.0..=1.0).contains(&t.score) {
            push(ViolationKind::ScoreOutOfRange, elem.clone());
        }
        if !seen.insert((t.subject_id, t.relation_index, t.object_id)) {
            push(ViolationKind::DuplicateTriplet, elem.clone());
        }
        if let (Some(s), Some(o), true) = (subject, object, relation_ok) {
            let classes_ok = s.class_index < vocab.num_objects() && o.class_index < vocab.num_objects();
            if classes_ok && !vocab.is_admissible(s.class_index, t.relation_index, o.class_index) {
                push(ViolationKind::InadmissibleCombination, elem);
            }
        }
    }
    out
}
