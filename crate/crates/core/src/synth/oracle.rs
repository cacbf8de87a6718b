use std::collections::HashSet;

use super::{GenerationError, Predicate, RelationRule};
use crate::geometry::{boundary_gap, intersection_area, obb_area, wrap_half_pi, OrientedBox};
use crate::model::{CategoryVocabulary, ObjectInstance, Triplet};

/// [`Predicate`] with class names resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledPredicate {
    GapAtMost(f64),
    GapAbove(f64),
    CenterDistance(f64, f64),
    Parallel(f64),
    NotParallel(f64),
    Contained(f64),
    AlignedWith(f64),
    SameAnchor(usize, f64),
    DifferentAnchor(usize, f64),
}

/// A relation rule ready for evaluation; angles are in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledRule {
    pub relation: usize,
    pub subject_class: usize,
    pub object_class: usize,
    pub when: Vec<CompiledPredicate>,
}

pub fn compile_rules(rules: &[RelationRule], vocab: &CategoryVocabulary) -> Result<Vec<CompiledRule>, GenerationError> {
    let class = |n: &str| vocab.object_index(n).ok_or_else(|| GenerationError::UnknownClass(n.to_string()));
    rules
        .iter()
        .map(|r| {
            let when = r
                .when
                .iter()
                .map(|p| {
                    Ok(match p {
                        Predicate::GapAtMost { max } => CompiledPredicate::GapAtMost(*max),
                        Predicate::GapAbove { min } => CompiledPredicate::GapAbove(*min),
                        Predicate::CenterDistance { min, max } => CompiledPredicate::CenterDistance(*min, *max),
                        Predicate::Parallel { tol_deg } => CompiledPredicate::Parallel(tol_deg.to_radians()),
                        Predicate::NotParallel { tol_deg } => CompiledPredicate::NotParallel(tol_deg.to_radians()),
                        Predicate::Contained { min_fraction } => CompiledPredicate::Contained(*min_fraction),
                        Predicate::AlignedWith { tol_deg } => CompiledPredicate::AlignedWith(tol_deg.to_radians()),
                        Predicate::SameAnchor { class: c, max_gap } => CompiledPredicate::SameAnchor(class(c)?, *max_gap),
                        Predicate::DifferentAnchor { class: c, max_gap } => {
                            CompiledPredicate::DifferentAnchor(class(c)?, *max_gap)
                        }
                    })
                })
                .collect::<Result<_, GenerationError>>()?;
            Ok(CompiledRule {
                relation: vocab.relation_index(&r.relation).ok_or_else(|| GenerationError::UnknownClass(r.relation.clone()))?,
                subject_class: class(&r.subject)?,
                object_class: class(&r.object)?,
                when,
            })
        })
        .collect()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    wrap_half_pi(a - b).abs()
}

fn anchors_within(objects: &[ObjectInstance], me: usize, exclude: usize, class: usize, max_gap: f64) -> Vec<usize> {
    objects
        .iter()
        .enumerate()
        .filter(|&(k, a)| k != me && k != exclude && a.class_index == class && boundary_gap(&objects[me].bbox, &a.bbox) <= max_gap)
        .map(|(k, _)| k)
        .collect()
}

fn holds(p: &CompiledPredicate, objects: &[ObjectInstance], s: usize, o: usize) -> bool {
    let (sb, ob): (&OrientedBox, &OrientedBox) = (&objects[s].bbox, &objects[o].bbox);
    match *p {
        CompiledPredicate::GapAtMost(max) => boundary_gap(sb, ob) <= max,
        CompiledPredicate::GapAbove(min) => boundary_gap(sb, ob) > min,
        CompiledPredicate::CenterDistance(min, max) => {
            let (a, b) = (sb.center(), ob.center());
            let d = (a.x - b.x).hypot(a.y - b.y);
            (min..=max).contains(&d)
        }
        CompiledPredicate::Parallel(tol) => angle_gap(sb.angle(), ob.angle()) <= tol,
        CompiledPredicate::NotParallel(tol) => angle_gap(sb.angle(), ob.angle()) > tol,
        CompiledPredicate::Contained(f) => intersection_area(sb, ob) >= f * obb_area(sb),
        CompiledPredicate::AlignedWith(tol) => {
            let (a, b) = (sb.center(), ob.center());
            angle_gap((b.y - a.y).atan2(b.x - a.x), sb.angle()) <= tol
        }
        CompiledPredicate::SameAnchor(class, gap) => {
            let sa = anchors_within(objects, s, o, class, gap);
            let oa: HashSet<usize> = anchors_within(objects, o, s, class, gap).into_iter().collect();
            sa.iter().any(|k| oa.contains(k))
        }
        CompiledPredicate::DifferentAnchor(class, gap) => {
            let sa = anchors_within(objects, s, o, class, gap);
            let oa: HashSet<usize> = anchors_within(objects, o, s, class, gap).into_iter().collect();
            !sa.is_empty() && !oa.is_empty() && sa.iter().all(|k| !oa.contains(k))
        }
    }
}

/// Evaluates every rule on every ordered pair. Output is ordered by subject
/// position, object position, then rule order; a relation fires at most once
/// per pair.
pub fn relationship_oracle(objects: &[ObjectInstance], rules: &[CompiledRule]) -> Vec<Triplet> {
    let mut out = Vec::new();
    for s in 0..objects.len() {
        for o in 0..objects.len() {
            if s == o {
                continue;
            }
            let mut fired: Vec<usize> = Vec::new();
            for rule in rules {
                if objects[s].class_index != rule.subject_class || objects[o].class_index != rule.object_class {
                    continue;
                }
                if fired.contains(&rule.relation) {
                    continue;
                }
                if rule.when.iter().all(|p| holds(p, objects, s, o)) {
                    fired.push(rule.relation);
                    out.push(Triplet::ground_truth(objects[s].id, rule.relation, objects[o].id));
                }
            }
        }
    }
    out
}
