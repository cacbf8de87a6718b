use serde::{Deserialize, Serialize};

use super::ObjectView;
use crate::model::{SceneGraph, Triplet};

/// `P(relation | subject class, object class)` estimated over every ordered
/// object pair of the training scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBaseline {
    pub object_classes: usize,
    pub relation_classes: usize,
    /// Ordered pairs seen per `(subject, object)` class pair, row-major.
    pub pair_counts: Vec<u64>,
    /// Triplets per `(subject, object, relation)`, row-major.
    pub relation_counts: Vec<u64>,
}

impl FrequencyBaseline {
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a SceneGraph>, object_classes: usize, relation_classes: usize) -> Self {
        let mut b = Self {
            object_classes,
            relation_classes,
            pair_counts: vec![0; object_classes * object_classes],
            relation_counts: vec![0; object_classes * object_classes * relation_classes],
        };
        for g in graphs {
            for s in &g.objects {
                for o in &g.objects {
                    if s.id != o.id {
                        b.pair_counts[s.class_index * object_classes + o.class_index] += 1;
                    }
                }
            }
            for t in &g.triplets {
                if let (Some(s), Some(o)) = (g.object(t.subject_id), g.object(t.object_id)) {
                    let k = b.index(s.class_index, o.class_index, t.relation_index);
                    b.relation_counts[k] += 1;
                }
            }
        }
        b
    }

    fn index(&self, s: usize, o: usize, r: usize) -> usize {
        (s * self.object_classes + o) * self.relation_classes + r
    }

    pub fn probability(&self, s: usize, o: usize, r: usize) -> f64 {
        let n = self.pair_counts[s * self.object_classes + o];
        if n == 0 {
            0.0
        } else {
            self.relation_counts[self.index(s, o, r)] as f64 / n as f64
        }
    }

    /// Triplets with a positive frequency for every candidate pair, scored by
    /// frequency times both label confidences.
    pub fn predict(&self, view: &ObjectView, pairs: &[(u32, u32)]) -> Vec<Triplet> {
        let mut out = Vec::new();
        for &(si, oi) in pairs {
            let (Some(sp), Some(op)) = (
                view.graph.objects.iter().position(|x| x.id == si),
                view.graph.objects.iter().position(|x| x.id == oi),
            ) else {
                continue;
            };
            let (s, o) = (&view.graph.objects[sp], &view.graph.objects[op]);
            let conf = view.confidence[sp] * view.confidence[op];
            for r in 0..self.relation_classes {
                let p = self.probability(s.class_index, o.class_index, r);
                if p > 0.0 {
                    out.push(Triplet { subject_id: si, object_id: oi, relation_index: r, score: p * conf });
                }
            }
        }
        out
    }
}
