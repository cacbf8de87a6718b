//! Independent oracles shared by the integration targets. Nothing here calls
//! into the library's geometry or evaluator internals; each oracle is written
//! from the metric and geometry definitions directly.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cascade_sgg::eval::Task;
use cascade_sgg::geometry::{OrientedBox, Point, RotatedRect};
use cascade_sgg::model::{ObjectInstance, SceneGraph, Triplet};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn pts(b: &OrientedBox) -> Vec<(f64, f64)> {
    b.corners().iter().map(|p| (p.x, p.y)).collect()
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].0 * poly[(i + 1) % n].1 - poly[(i + 1) % n].0 * poly[i].1).sum::<f64>() / 2.0
}

/// Inside-or-on test for a convex polygon of either winding.
pub fn inside_convex(poly: &[(f64, f64)], p: (f64, f64), eps: f64) -> bool {
    let n = poly.len();
    let s = shoelace(poly).signum();
    (0..n).all(|i| s * cross(poly[i], poly[(i + 1) % n], p) >= -eps)
}

fn segment_hit(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> Option<(f64, f64)> {
    let r = (b.0 - a.0, b.1 - a.1);
    let s = (d.0 - c.0, d.1 - c.1);
    let den = r.0 * s.1 - r.1 * s.0;
    if den.abs() < 1e-300 {
        return None;
    }
    let t = ((c.0 - a.0) * s.1 - (c.1 - a.1) * s.0) / den;
    let u = ((c.0 - a.0) * r.1 - (c.1 - a.1) * r.0) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| (a.0 + t * r.0, a.1 + t * r.1))
}

/// Exact overlap area of two convex quadrilaterals: collect the corners of
/// each lying inside the other plus every edge crossing, order them by angle
/// about their centroid and take the shoelace area.
pub fn overlap_area_oracle(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (pa, pb) = (pts(a), pts(b));
    let scale = pa.iter().chain(&pb).map(|p| p.0.abs().max(p.1.abs())).fold(1.0, f64::max);
    let eps = 1e-12 * scale * scale;
    let mut v: Vec<(f64, f64)> = Vec::new();
    v.extend(pa.iter().copied().filter(|&p| inside_convex(&pb, p, eps)));
    v.extend(pb.iter().copied().filter(|&p| inside_convex(&pa, p, eps)));
    for i in 0..4 {
        for j in 0..4 {
            if let Some(p) = segment_hit(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4]) {
                v.push(p);
            }
        }
    }
    if v.len() < 3 {
        return 0.0;
    }
    let cx = v.iter().map(|p| p.0).sum::<f64>() / v.len() as f64;
    let cy = v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
    v.sort_by(|p, q| (p.1 - cy).atan2(p.0 - cx).total_cmp(&(q.1 - cy).atan2(q.0 - cx)));
    shoelace(&v).abs()
}

pub fn iou_oracle(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = overlap_area_oracle(a, b);
    let union = shoelace(&pts(a)).abs() + shoelace(&pts(b)).abs() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Edge half-planes `(nx, ny, c)` of a convex polygon, oriented so that
/// interior points satisfy `nx·x + ny·y + c ≥ 0`.
fn half_planes(poly: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    let s = shoelace(poly).signum();
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (nx, ny) = (-(b.1 - a.1) * s, (b.0 - a.0) * s);
            (nx, ny, -(nx * a.0 + ny * a.1))
        })
        .collect()
}

fn inside_planes(planes: &[(f64, f64, f64)], p: (f64, f64)) -> bool {
    planes.iter().all(|&(nx, ny, c)| nx * p.0 + ny * p.1 + c >= 0.0)
}

/// Monte Carlo IoU from `samples` uniform points over the joint bounding box.
pub fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let (pa, pb) = (pts(a), pts(b));
    let all: Vec<_> = pa.iter().chain(&pb).collect();
    let (x0, x1) = (all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let (ha, hb) = (half_planes(&pa), half_planes(&pb));
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = (x0 + (x1 - x0) * rng.gen::<f64>(), y0 + (y1 - y0) * rng.gen::<f64>());
        let (ia, ib) = (inside_planes(&ha, p), inside_planes(&hb, p));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Random rectangle with centre in `[0, span]²`, sides in `[1, 20]` and any angle.
pub fn random_box(rng: &mut impl Rng, span: f64) -> OrientedBox {
    OrientedBox::from_rotated_rect(RotatedRect {
        cx: rng.gen_range(0.0..span),
        cy: rng.gen_range(0.0..span),
        width: rng.gen_range(1.0..20.0),
        height: rng.gen_range(1.0..20.0),
        angle: rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
    })
    .expect("positive sides give a valid box")
}

/// Two random boxes with overlapping neighbourhoods, so most pairs intersect.
pub fn fuzzed_pair(rng: &mut impl Rng) -> (OrientedBox, OrientedBox) {
    let a = random_box(rng, 10.0);
    let b = random_box(rng, 10.0);
    (a, b)
}

pub fn square(x0: f64, y0: f64, side: f64) -> OrientedBox {
    OrientedBox::from_corners([Point::new(x0, y0), Point::new(x0 + side, y0), Point::new(x0 + side, y0 + side), Point::new(x0, y0 + side)])
        .expect("square")
}

// -------------------------------------------------------------- evaluator

/// MR, mMR and HMR at one K, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteMetrics {
    pub mr: f64,
    pub mmr: f64,
    pub hmr: f64,
}

fn find<'a>(g: &'a SceneGraph, id: u32) -> Option<&'a ObjectInstance> {
    g.objects.iter().find(|o| o.id == id)
}

/// Recall evaluator written straight from the metric definitions:
/// sort predictions by score (desc), then (subject, object), then relation;
/// keep the first `k`; walk them in that order, each claiming the earliest
/// not yet claimed ground-truth triplet it matches.
pub fn brute_force_metrics(images: &[(&SceneGraph, &SceneGraph)], task: Task, k: usize, iou: f64, relation_classes: usize) -> BruteMetrics {
    let mut gt_count = vec![0usize; relation_classes];
    let mut hit_count = vec![0usize; relation_classes];
    for &(gt, pred) in images {
        let mut ranked: Vec<&Triplet> = pred.triplets.iter().collect();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.subject_id.cmp(&b.subject_id))
                .then(a.object_id.cmp(&b.object_id))
                .then(a.relation_index.cmp(&b.relation_index))
        });
        ranked.truncate(k);
        let mut claimed = vec![false; gt.triplets.len()];
        for p in ranked {
            let (Some(ps), Some(po)) = (find(pred, p.subject_id), find(pred, p.object_id)) else { continue };
            for (j, g) in gt.triplets.iter().enumerate() {
                if claimed[j] || g.relation_index != p.relation_index {
                    continue;
                }
                let (gs, go) = (find(gt, g.subject_id).unwrap(), find(gt, g.object_id).unwrap());
                if task != Task::PredCls && (gs.class_index != ps.class_index || go.class_index != po.class_index) {
                    continue;
                }
                if iou_oracle(&gs.bbox, &ps.bbox) >= iou && iou_oracle(&go.bbox, &po.bbox) >= iou {
                    claimed[j] = true;
                    break;
                }
            }
        }
        for (g, c) in gt.triplets.iter().zip(claimed) {
            gt_count[g.relation_index] += 1;
            hit_count[g.relation_index] += c as usize;
        }
    }
    let total: usize = gt_count.iter().sum();
    let hits: usize = hit_count.iter().sum();
    let mr = if total == 0 { 0.0 } else { 100.0 * hits as f64 / total as f64 };
    let per_class: Vec<f64> =
        (0..relation_classes).filter(|&c| gt_count[c] > 0).map(|c| 100.0 * hit_count[c] as f64 / gt_count[c] as f64).collect();
    let mmr = if per_class.is_empty() { 0.0 } else { per_class.iter().sum::<f64>() / per_class.len() as f64 };
    let hmr = if mr + mmr == 0.0 { 0.0 } else { 2.0 * mr * mmr / (mr + mmr) };
    BruteMetrics { mr, mmr, hmr }
}

/// Keeps the first `max_objects` objects and the triplets among them.
pub fn truncate_scene(g: &SceneGraph, max_objects: usize) -> SceneGraph {
    let mut out = g.clone();
    out.objects.truncate(max_objects);
    let ids: std::collections::BTreeSet<u32> = out.objects.iter().map(|o| o.id).collect();
    out.triplets.retain(|t| ids.contains(&t.subject_id) && ids.contains(&t.object_id));
    out
}

/// A noisy prediction for `gt` under `task`: coarse scores (so ties are
/// common), GT triplets mixed with decoys and duplicates, relabelled objects
/// for SGCls and jittered, partly dropped detections for SGDet.
pub fn perturbed_prediction(gt: &SceneGraph, task: Task, relation_classes: usize, object_classes: usize, rng: &mut impl Rng) -> SceneGraph {
    let mut pred = SceneGraph::empty(gt.image_width, gt.image_height);
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    for o in &gt.objects {
        let mut obj = o.clone();
        if task != Task::PredCls && rng.gen_bool(0.2) {
            obj.class_index = rng.gen_range(0..object_classes);
        }
        if task == Task::SgDet {
            if rng.gen_bool(0.1) {
                continue;
            }
            let c = o.bbox.center();
            let shift = if rng.gen_bool(0.7) { 0.05 } else { 0.6 } * o.bbox.max_side();
            obj.bbox = o.bbox.translated(rng.gen_range(-shift..=shift), rng.gen_range(-shift..=shift));
            obj.bbox = obj.bbox.rotated_about(c, rng.gen_range(-0.2..0.2));
        }
        obj.id = pred.objects.len() as u32;
        remap.insert(o.id, obj.id);
        pred.objects.push(obj);
    }
    let n = pred.objects.len() as u32;
    let score = |rng: &mut dyn rand::RngCore| (rng.gen_range(0..10) as f64 + 1.0) / 10.0;
    for t in &gt.triplets {
        if !rng.gen_bool(0.7) {
            continue;
        }
        let (Some(&s), Some(&o)) = (remap.get(&t.subject_id), remap.get(&t.object_id)) else { continue };
        let copies = if rng.gen_bool(0.2) { 2 } else { 1 };
        for _ in 0..copies {
            pred.triplets.push(Triplet { subject_id: s, object_id: o, relation_index: t.relation_index, score: score(rng) });
        }
    }
    if n >= 2 {
        for _ in 0..(3 * gt.triplets.len() + 20) {
            let s = rng.gen_range(0..n);
            let mut o = rng.gen_range(0..n - 1);
            if o >= s {
                o += 1;
            }
            pred.triplets.push(Triplet { subject_id: s, object_id: o, relation_index: rng.gen_range(0..relation_classes), score: score(rng) });
        }
    }
    // Shuffle so list position carries no information.
    for i in (1..pred.triplets.len()).rev() {
        pred.triplets.swap(i, rng.gen_range(0..=i));
    }
    pred
}

// ------------------------------------------------------------ derivatives

/// Central differences of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute gap when both are tiny.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

// ------------------------------------------------------------- PPG bench

/// The seeded two-cluster benchmark: `n` training samples and held-out
/// samples from a unit-scale cluster at the origin, plus held-out samples
/// from a far cluster centred at `(2, …, 2)`.
pub struct TwoClusters {
    pub train: Vec<Vec<f64>>,
    pub held_out: Vec<Vec<f64>>,
    pub far: Vec<Vec<f64>>,
}

pub fn two_clusters(n: usize, held: usize, dim: usize, seed: u64) -> TwoClusters {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut draw = |count: usize, centre: f64| -> Vec<Vec<f64>> {
        (0..count).map(|_| (0..dim).map(|_| centre + noise.sample(&mut r)).collect()).collect()
    };
    let train = draw(n, 0.0);
    let held_out = draw(held, 0.0);
    let far = draw(held, 2.0);
    TwoClusters { train, held_out, far }
}

// ------------------------------------------------------------- HMR triples

#[derive(Debug, Clone)]
pub struct HmrRow {
    pub group: String,
    pub row: String,
    pub task: String,
    pub k: usize,
    pub mr: f64,
    pub mmr: f64,
    pub hmr: f64,
}

/// Printed (MR, mMR, HMR) triples transcribed into `tests/data/hmr_triples.csv`.
pub fn hmr_rows() -> Vec<HmrRow> {
    let text = include_str!("../data/hmr_triples.csv");
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            HmrRow {
                group: f[0].into(),
                row: f[1].into(),
                task: f[2].into(),
                k: f[3].parse().unwrap(),
                mr: f[4].parse().unwrap(),
                mmr: f[5].parse().unwrap(),
                hmr: f[6].parse().unwrap(),
            }
        })
        .collect()
}
