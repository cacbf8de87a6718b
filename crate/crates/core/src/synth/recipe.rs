use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::model::CategoryVocabulary;

/// How one class of objects is laid out in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutRule {
    pub class: String,
    /// Inclusive instance-count range. For `polyline` placement this counts lines.
    pub count: [u32; 2],
    /// Inclusive range of the first-edge length.
    pub length: [f64; 2],
    /// Inclusive range of the second-edge length.
    pub breadth: [f64; 2],
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    /// Anywhere in the image with a random angle.
    Uniform { margin: f64 },
    /// Long axis parallel to a randomly chosen image border, `margin` px away.
    Edge { margin: f64 },
    /// Beside a random instance of `anchor`, with a boundary gap drawn from
    /// `gap` and an angle within `align_jitter_deg` of the anchor's.
    Near { anchor: String, gap: [f64; 2], align_jitter_deg: f64 },
    /// Fully inside a random instance of `container`. With probability
    /// `aligned_fraction` the angle is within `jitter_deg` of the container's,
    /// otherwise uniform.
    Inside { container: String, aligned_fraction: f64, jitter_deg: f64 },
    /// Straight chains of `per_line` objects spaced by `spacing`, oriented
    /// along the chain.
    Polyline { per_line: [u32; 2], spacing: [f64; 2], margin: f64 },
}

/// One geometric condition over an ordered `(subject, object)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// Boundary gap ≤ `max`.
    GapAtMost { max: f64 },
    /// Boundary gap > `min`.
    GapAbove { min: f64 },
    /// `min ≤` center distance `≤ max`.
    CenterDistance { min: f64, max: f64 },
    /// Angle difference (mod π) ≤ `tol_deg`.
    Parallel { tol_deg: f64 },
    /// Angle difference (mod π) > `tol_deg`.
    NotParallel { tol_deg: f64 },
    /// Fraction of the subject's area inside the object ≥ `min_fraction`.
    Contained { min_fraction: f64 },
    /// Direction from subject center to object center is within `tol_deg`
    /// (mod π) of the subject's angle.
    AlignedWith { tol_deg: f64 },
    /// Some third object of `class` lies within `max_gap` of both.
    SameAnchor { class: String, max_gap: f64 },
    /// Both have an object of `class` within `max_gap`, but never the same one.
    DifferentAnchor { class: String, max_gap: f64 },
}

/// Emits `relation` for every ordered pair of the given classes satisfying
/// all predicates in `when`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRule {
    pub relation: String,
    pub subject: String,
    pub object: String,
    pub when: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecipe {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub layout: Vec<LayoutRule>,
    #[serde(default)]
    pub relations: Vec<RelationRule>,
}

impl SceneRecipe {
    pub fn from_toml(text: &str) -> Result<Self, GenerationError> {
        toml::from_str(text).map_err(|e| GenerationError::InvalidRecipe(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("recipes always serialise")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks class references, ranges and admissibility of every rule.
    pub fn validate(&self, vocab: &CategoryVocabulary) -> Result<(), GenerationError> {
        let bad = |msg: String| Err(GenerationError::InvalidRecipe(format!("{}: {msg}", self.name)));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("image size must be positive".into());
        }
        let object = |name: &str| vocab.object_index(name).ok_or_else(|| GenerationError::UnknownClass(name.to_string()));
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        for rule in &self.layout {
            object(&rule.class)?;
            if rule.count[0] > rule.count[1] {
                return bad(format!("count range of `{}` is reversed", rule.class));
            }
            if !range_ok(rule.length) || !range_ok(rule.breadth) {
                return bad(format!("size ranges of `{}` must be positive and ordered", rule.class));
            }
            match &rule.placement {
                Placement::Uniform { margin } | Placement::Edge { margin } if *margin < 0.0 => {
                    return bad("margins must be non-negative".into())
                }
                Placement::Near { anchor, gap, align_jitter_deg } => {
                    object(anchor)?;
                    if !range_ok(*gap) || *align_jitter_deg < 0.0 {
                        return bad(format!("near-placement of `{}` needs a positive gap range", rule.class));
                    }
                }
                Placement::Inside { container, aligned_fraction, jitter_deg } => {
                    object(container)?;
                    if !(0.0..=1.0).contains(aligned_fraction) || *jitter_deg < 0.0 {
                        return bad(format!("inside-placement of `{}` has bad alignment settings", rule.class));
                    }
                }
                Placement::Polyline { per_line, spacing, margin } => {
                    if per_line[0] > per_line[1] || per_line[0] == 0 || !range_ok(*spacing) || *margin < 0.0 {
                        return bad(format!("polyline placement of `{}` has bad ranges", rule.class));
                    }
                }
                _ => {}
            }
        }
        for rule in &self.relations {
            let s = object(&rule.subject)?;
            let o = object(&rule.object)?;
            let r = vocab
                .relation_index(&rule.relation)
                .ok_or_else(|| GenerationError::UnknownClass(rule.relation.clone()))?;
            if !vocab.is_admissible(s, r, o) {
                return bad(format!("rule {} {} {} is not in the interaction map", rule.subject, rule.relation, rule.object));
            }
            for p in &rule.when {
                let positive = match p {
                    Predicate::GapAtMost { max } => *max > 0.0,
                    Predicate::GapAbove { min } => *min >= 0.0,
                    Predicate::CenterDistance { min, max } => *min >= 0.0 && *max > *min,
                    Predicate::Parallel { tol_deg } | Predicate::NotParallel { tol_deg } | Predicate::AlignedWith { tol_deg } => {
                        *tol_deg > 0.0
                    }
                    Predicate::Contained { min_fraction } => *min_fraction > 0.0 && *min_fraction <= 1.0,
                    Predicate::SameAnchor { class, max_gap } | Predicate::DifferentAnchor { class, max_gap } => {
                        object(class)?;
                        *max_gap > 0.0
                    }
                };
                if !positive {
                    return bad(format!("rule `{}` has a non-positive threshold", rule.relation));
                }
            }
        }
        Ok(())
    }
}

/// The bundled scenario families.
pub fn bundled_recipes() -> Vec<SceneRecipe> {
    [
        include_str!("../../assets/recipes/harbor.toml"),
        include_str!("../../assets/recipes/airport.toml"),
        include_str!("../../assets/recipes/power_line.toml"),
    ]
    .iter()
    .map(|t| SceneRecipe::from_toml(t).expect("bundled recipe parses"))
    .collect()
}
