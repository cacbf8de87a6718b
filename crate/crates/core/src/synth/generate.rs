use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::oracle::{compile_rules, relationship_oracle};
use super::{GenerationError, LayoutRule, Placement, SceneRecipe};
use crate::geometry::{intersection_area, wrap_half_pi, OrientedBox, Point, RotatedRect};
use crate::model::{CategoryVocabulary, ObjectInstance, SceneGraph};

/// Placement attempts per object (or per chain) before giving up.
pub const MAX_ATTEMPTS: usize = 500;

struct Canvas<'a> {
    width: f64,
    height: f64,
    objects: Vec<ObjectInstance>,
    vocab: &'a CategoryVocabulary,
}

impl Canvas<'_> {
    fn in_bounds(&self, b: &OrientedBox) -> bool {
        b.corners().iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height)
    }

    /// In bounds and disjoint from everything placed except `allowed`.
    fn fits(&self, b: &OrientedBox, allowed: Option<usize>) -> bool {
        self.in_bounds(b)
            && self
                .objects
                .iter()
                .enumerate()
                .all(|(k, o)| Some(k) == allowed || intersection_area(b, &o.bbox) <= 0.0)
    }

    fn push(&mut self, class_index: usize, bbox: OrientedBox) {
        let id = self.objects.len() as u32;
        self.objects.push(ObjectInstance { id, class_index, bbox });
    }

    fn instances_of(&self, class: usize) -> Vec<usize> {
        self.objects.iter().enumerate().filter(|(_, o)| o.class_index == class).map(|(k, _)| k).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

fn rect(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Option<OrientedBox> {
    OrientedBox::from_rotated_rect(RotatedRect { cx, cy, width: w, height: h, angle: wrap_half_pi(angle) }).ok()
}

fn random_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-FRAC_PI_2..FRAC_PI_2)
}

fn describe(rule: &LayoutRule) -> String {
    let how = match &rule.placement {
        Placement::Uniform { .. } => "uniform".to_string(),
        Placement::Edge { .. } => "edge".to_string(),
        Placement::Near { anchor, .. } => format!("near {anchor}"),
        Placement::Inside { container, .. } => format!("inside {container}"),
        Placement::Polyline { .. } => "polyline".to_string(),
    };
    format!("{} ({how})", rule.class)
}

fn place_one(canvas: &Canvas, rule: &LayoutRule, rng: &mut ChaCha8Rng) -> Option<OrientedBox> {
    let (w, h) = (canvas.width, canvas.height);
    let len = uniform(rng, rule.length);
    let brd = uniform(rng, rule.breadth);
    match &rule.placement {
        Placement::Uniform { margin } => {
            let b = rect(rng.gen_range(*margin..=w - margin), rng.gen_range(*margin..=h - margin), len, brd, random_angle(rng))?;
            let m = *margin;
            let inside = b.corners().iter().all(|p| p.x >= m && p.y >= m && p.x <= w - m && p.y <= h - m);
            (inside && canvas.fits(&b, None)).then_some(b)
        }
        Placement::Edge { margin } => {
            let side = rng.gen_range(0..4);
            let b = match side {
                0 | 1 => {
                    let lo = margin + len / 2.0;
                    let hi = w - margin - len / 2.0;
                    if lo > hi {
                        return None;
                    }
                    let cy = if side == 0 { margin + brd / 2.0 } else { h - margin - brd / 2.0 };
                    rect(rng.gen_range(lo..=hi), cy, len, brd, 0.0)?
                }
                _ => {
                    let lo = margin + len / 2.0;
                    let hi = h - margin - len / 2.0;
                    if lo > hi {
                        return None;
                    }
                    let cx = if side == 2 { margin + brd / 2.0 } else { w - margin - brd / 2.0 };
                    rect(cx, rng.gen_range(lo..=hi), len, brd, FRAC_PI_2)?
                }
            };
            canvas.fits(&b, None).then_some(b)
        }
        Placement::Near { anchor, gap, align_jitter_deg } => {
            let anchors = canvas.instances_of(canvas.vocab.object_index(anchor)?);
            let a = canvas.objects[anchors[rng.gen_range(0..anchors.len())]].bbox.rotated_rect();
            let (s, c) = a.angle.sin_cos();
            let slide_max = ((a.width - len) / 2.0).max(0.0);
            let along = if slide_max > 0.0 { rng.gen_range(-slide_max..=slide_max) } else { 0.0 };
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let off = side * (a.height / 2.0 + uniform(rng, *gap) + brd / 2.0);
            let cx = a.cx + along * c - off * s;
            let cy = a.cy + along * s + off * c;
            let jitter = align_jitter_deg.to_radians();
            let angle = a.angle + if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
            let b = rect(cx, cy, len, brd, angle)?;
            canvas.fits(&b, None).then_some(b)
        }
        Placement::Inside { container, aligned_fraction, jitter_deg } => {
            let hosts = canvas.instances_of(canvas.vocab.object_index(container)?);
            let host = hosts[rng.gen_range(0..hosts.len())];
            let a = canvas.objects[host].bbox.rotated_rect();
            let (s, c) = a.angle.sin_cos();
            let u = rng.gen_range(-0.5..=0.5) * a.width;
            let v = rng.gen_range(-0.5..=0.5) * a.height;
            let angle = if rng.gen_bool(*aligned_fraction) {
                let j = jitter_deg.to_radians();
                a.angle + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 }
            } else {
                random_angle(rng)
            };
            let b = rect(a.cx + u * c - v * s, a.cy + u * s + v * c, len, brd, angle)?;
            let host_box = &canvas.objects[host].bbox;
            (b.corners().iter().all(|&p| host_box.contains(p)) && canvas.fits(&b, Some(host))).then_some(b)
        }
        Placement::Polyline { .. } => unreachable!("chains are placed by place_chain"),
    }
}

fn place_chain(canvas: &Canvas, rule: &LayoutRule, rng: &mut ChaCha8Rng) -> Option<Vec<OrientedBox>> {
    let Placement::Polyline { per_line, spacing, margin } = &rule.placement else { unreachable!() };
    let n = rng.gen_range(per_line[0]..=per_line[1]);
    let phi = rng.gen_range(-PI..PI);
    let (s, c) = phi.sin_cos();
    let mut p = Point::new(rng.gen_range(*margin..=canvas.width - margin), rng.gen_range(*margin..=canvas.height - margin));
    let mut out: Vec<OrientedBox> = Vec::with_capacity(n as usize);
    for k in 0..n {
        if k > 0 {
            let d = uniform(rng, *spacing);
            p = Point::new(p.x + d * c, p.y + d * s);
        }
        let b = rect(p.x, p.y, uniform(rng, rule.length), uniform(rng, rule.breadth), phi)?;
        let m = *margin;
        let inside = b.corners().iter().all(|q| q.x >= m && q.y >= m && q.x <= canvas.width - m && q.y <= canvas.height - m);
        if !inside || !canvas.fits(&b, None) || out.iter().any(|o| intersection_area(&b, o) > 0.0) {
            return None;
        }
        out.push(b);
    }
    Some(out)
}

/// Lays out objects rule by rule, then labels every ordered pair with the
/// recipe's relationship rules. Object ids are list positions.
pub fn generate_scene(recipe: &SceneRecipe, vocab: &CategoryVocabulary) -> Result<SceneGraph, GenerationError> {
    recipe.validate(vocab)?;
    let rules = compile_rules(&recipe.relations, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut canvas = Canvas { width: recipe.width, height: recipe.height, objects: Vec::new(), vocab };
    for rule in &recipe.layout {
        let class = vocab.object_index(&rule.class).ok_or_else(|| GenerationError::UnknownClass(rule.class.clone()))?;
        let count = rng.gen_range(rule.count[0]..=rule.count[1]);
        let needs = match &rule.placement {
            Placement::Near { anchor, .. } => Some(anchor),
            Placement::Inside { container, .. } => Some(container),
            _ => None,
        };
        if let Some(needed) = needs {
            let idx = vocab.object_index(needed).ok_or_else(|| GenerationError::UnknownClass(needed.clone()))?;
            if count > 0 && canvas.instances_of(idx).is_empty() {
                return Err(GenerationError::Infeasible { rule: describe(rule), attempts: 0 });
            }
        }
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                if matches!(rule.placement, Placement::Polyline { .. }) {
                    if let Some(chain) = place_chain(&canvas, rule, &mut rng) {
                        for b in chain {
                            canvas.push(class, b);
                        }
                        placed = true;
                        break;
                    }
                } else if let Some(b) = place_one(&canvas, rule, &mut rng) {
                    canvas.push(class, b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(GenerationError::Infeasible { rule: describe(rule), attempts: MAX_ATTEMPTS });
            }
        }
    }
    let triplets = relationship_oracle(&canvas.objects, &rules);
    Ok(SceneGraph { image_width: recipe.width, image_height: recipe.height, objects: canvas.objects, triplets })
}
