//! Plain-text annotation format.
//!
//! Object file: an optional `imagesize: W H` header, then one object per line
//! as `x1 y1 x2 y2 x3 y3 x4 y4 class_name` with clockwise corners.
//! Triplet file: `subject_index relation_name object_index [score]`, indices
//! being 0-based positions in the object list. `#` starts a comment.

use std::fmt::Write as _;

use thiserror::Error;

use super::{validate_scene_graph, CategoryVocabulary, ObjectInstance, SceneGraph, Triplet, Violation};
use crate::geometry::{OrientedBox, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("{file} line {line}: {msg}")]
    Parse { file: &'static str, line: usize, msg: String },
    #[error("{file} line {line}: unknown {kind} `{name}`")]
    UnknownName { file: &'static str, line: usize, kind: &'static str, name: String },
    #[error("invalid scene graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

fn content(raw: &str) -> &str {
    raw.split('#').next().unwrap_or("").trim()
}

pub fn parse_annotation_file(
    object_text: &str,
    triplet_text: &str,
    vocab: &CategoryVocabulary,
) -> Result<SceneGraph, AnnotationError> {
    let mut size: Option<(f64, f64)> = None;
    let mut objects = Vec::new();
    for (i, raw) in object_text.lines().enumerate() {
        let line = i + 1;
        let perr = |msg: String| AnnotationError::Parse { file: "objects", line, msg };
        let text = content(raw);
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix("imagesize:") {
            let dims: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| perr(format!("bad image size: {e}")))?;
            match dims[..] {
                [w, h] if w > 0.0 && h > 0.0 => size = Some((w, h)),
                _ => return Err(perr("image size must be two positive numbers".into())),
            }
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != 9 {
            return Err(perr(format!("expected 8 coordinates and a class name, found {} fields", tokens.len())));
        }
        let mut coords = [0.0; 8];
        for (slot, tok) in coords.iter_mut().zip(&tokens[..8]) {
            *slot = tok.parse().map_err(|_| perr(format!("malformed coordinate `{tok}`")))?;
        }
        let class_index = vocab.object_index(tokens[8]).ok_or_else(|| AnnotationError::UnknownName {
            file: "objects",
            line,
            kind: "object class",
            name: tokens[8].to_string(),
        })?;
        let corners = [0, 1, 2, 3].map(|k| Point::new(coords[2 * k], coords[2 * k + 1]));
        let bbox = OrientedBox::from_corners(corners).map_err(|e| perr(e.to_string()))?;
        objects.push(ObjectInstance { id: objects.len() as u32, class_index, bbox });
    }

    let mut triplets = Vec::new();
    for (i, raw) in triplet_text.lines().enumerate() {
        let line = i + 1;
        let perr = |msg: String| AnnotationError::Parse { file: "triplets", line, msg };
        let text = content(raw);
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if !(3..=4).contains(&tokens.len()) {
            return Err(perr("expected `subject_index relation_name object_index [score]`".into()));
        }
        let index = |tok: &str| -> Result<u32, AnnotationError> {
            let v: u32 = tok.parse().map_err(|_| perr(format!("malformed object index `{tok}`")))?;
            if v as usize >= objects.len() {
                return Err(perr(format!("object index {v} out of range ({} objects)", objects.len())));
            }
            Ok(v)
        };
        let subject_id = index(tokens[0])?;
        let object_id = index(tokens[2])?;
        let relation_index = vocab.relation_index(tokens[1]).ok_or_else(|| AnnotationError::UnknownName {
            file: "triplets",
            line,
            kind: "relation",
            name: tokens[1].to_string(),
        })?;
        let score = match tokens.get(3) {
            Some(tok) => tok.parse().map_err(|_| perr(format!("malformed score `{tok}`")))?,
            None => 1.0,
        };
        triplets.push(Triplet { subject_id, object_id, relation_index, score });
    }

    let (image_width, image_height) = size.unwrap_or_else(|| {
        let fold = |sel: fn(&Point) -> f64| {
            objects.iter().flat_map(|o| o.bbox.corners().iter()).map(sel).fold(1.0_f64, f64::max).ceil()
        };
        (fold(|p| p.x), fold(|p| p.y))
    });
    let graph = SceneGraph { image_width, image_height, objects, triplets };
    let structural: Vec<Violation> =
        validate_scene_graph(&graph, vocab).into_iter().filter(|v| v.kind.is_structural()).collect();
    if !structural.is_empty() {
        return Err(AnnotationError::Invalid(structural));
    }
    Ok(graph)
}

/// Writes `(object_text, triplet_text)` for a graph whose object ids are list
/// positions. Scores other than 1 are kept as a fourth triplet field.
pub fn serialize_annotation(graph: &SceneGraph, vocab: &CategoryVocabulary) -> (String, String) {
    let mut objects = String::new();
    let _ = writeln!(objects, "imagesize: {} {}", graph.image_width, graph.image_height);
    for o in &graph.objects {
        for p in o.bbox.corners() {
            let _ = write!(objects, "{} {} ", p.x, p.y);
        }
        let _ = writeln!(objects, "{}", vocab.object_name(o.class_index).unwrap_or("?"));
    }
    let position = |id: u32| graph.objects.iter().position(|o| o.id == id).unwrap_or(id as usize);
    let mut triplets = String::new();
    for t in &graph.triplets {
        let rel = vocab.relation_name(t.relation_index).unwrap_or("?");
        let _ = write!(triplets, "{} {} {}", position(t.subject_id), rel, position(t.object_id));
        if t.score != 1.0 {
            let _ = write!(triplets, " {}", t.score);
        }
        triplets.push('\n');
    }
    (objects, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::obb_area;

    fn vocab() -> CategoryVocabulary {
        CategoryVocabulary::from_text(
            "[objects]\ngravity_dam\nship\ndock\n[relations]\napproach\nparallelly_docked_at\n[interactions]\nship approach dock\n",
        )
        .unwrap()
    }

    #[test]
    fn empty_input() {
        let g = parse_annotation_file("", "", &vocab()).unwrap();
        assert!(g.objects.is_empty() && g.triplets.is_empty());
    }

    #[test]
    fn single_dam() {
        let g = parse_annotation_file("0 0 10 0 10 4 0 4 gravity_dam\n", "", &vocab()).unwrap();
        assert_eq!(g.objects.len(), 1);
        assert_eq!(vocab().object_name(g.objects[0].class_index), Some("gravity_dam"));
        assert_eq!(obb_area(&g.objects[0].bbox), 40.0);
    }

    #[test]
    fn errors_name_the_line() {
        let v = vocab();
        let err = parse_annotation_file("0 0 10 0 10 4 0 4 ship\n0 0 1 0 1 1 0 1 tower\n", "", &v).unwrap_err();
        assert!(matches!(err, AnnotationError::UnknownName { line: 2, ref name, .. } if name == "tower"));
        let err = parse_annotation_file("0 0 10 zero 10 4 0 4 ship\n", "", &v).unwrap_err();
        assert!(matches!(err, AnnotationError::Parse { line: 1, .. }));
        let objs = "0 0 10 0 10 4 0 4 ship\n20 0 30 0 30 4 20 4 dock\n";
        let err = parse_annotation_file(objs, "0 approach 1\n0 flies_over 1\n", &v).unwrap_err();
        assert!(matches!(err, AnnotationError::UnknownName { file: "triplets", line: 2, .. }));
        let err = parse_annotation_file(objs, "1 approach 1\n", &v).unwrap_err();
        assert!(matches!(err, AnnotationError::Invalid(ref vs) if vs.len() == 1));
    }

    #[test]
    fn multi_label_pair_and_inadmissible_is_not_fatal() {
        let objs = "0 0 10 0 10 4 0 4 ship\n20 0 30 0 30 4 20 4 dock\n";
        let g = parse_annotation_file(objs, "0 approach 1\n0 parallelly_docked_at 1\n", &vocab()).unwrap();
        assert_eq!(g.triplets.len(), 2);
        assert_eq!(g.triplets[0].pair(), g.triplets[1].pair());
        assert_ne!(g.triplets[0].relation_index, g.triplets[1].relation_index);
    }

    #[test]
    fn serialize_then_parse() {
        let v = vocab();
        let objs = "imagesize: 64 48\n0.5 0.25 10 0 10 4 0 4 ship\n20 0 30 0 30 4 20 4 dock\n";
        let g = parse_annotation_file(objs, "0 approach 1 0.75\n", &v).unwrap();
        let (o, t) = serialize_annotation(&g, &v);
        assert_eq!(parse_annotation_file(&o, &t, &v).unwrap(), g);
        assert_eq!((g.image_width, g.image_height), (64.0, 48.0));
    }
}
