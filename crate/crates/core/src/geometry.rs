//! Oriented-box geometry.
//!
//! Coordinates are image pixels with the origin at the top-left corner and
//! `y` growing downwards. A quadrilateral listed clockwise *on screen* under
//! that convention has a positive shoelace sum `Σ (x_i y_{i+1} - x_{i+1} y_i)`,
//! which is the orientation every [`OrientedBox`] is stored in.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boxes with an area below this are treated as degenerate.
pub const MIN_AREA: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in box corners")]
    NonFinite,
    #[error("degenerate box: area {0} is not positive")]
    Degenerate(f64),
    #[error("box corners are not clockwise (signed area {0})")]
    CounterClockwise(f64),
    #[error("box corners do not form a convex quadrilateral")]
    NotConvex,
    #[error("image dimensions must be positive, got {0}x{1}")]
    BadImageSize(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Shoelace sum over a closed polygon, halved. Positive for the clockwise
/// (y-down) orientation used throughout this crate.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Wraps an angle into `(-π/2, π/2]`.
pub fn wrap_half_pi(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

/// Center/size/angle parameterisation of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Direction of the first edge, in `(-π/2, π/2]`.
    pub angle: f64,
}

/// A convex quadrilateral footprint with clockwise corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Point; 4]", into = "[Point; 4]")]
pub struct OrientedBox {
    corners: [Point; 4],
}

impl TryFrom<[Point; 4]> for OrientedBox {
    type Error = GeometryError;

    fn try_from(c: [Point; 4]) -> Result<Self, Self::Error> {
        OrientedBox::from_corners(c)
    }
}

impl From<OrientedBox> for [Point; 4] {
    fn from(b: OrientedBox) -> Self {
        b.corners
    }
}

impl OrientedBox {
    /// Validates and wraps four clockwise corners.
    pub fn from_corners(corners: [Point; 4]) -> Result<Self, GeometryError> {
        if corners.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = signed_area(&corners);
        if area.abs() < MIN_AREA {
            return Err(GeometryError::Degenerate(area));
        }
        if area < 0.0 {
            return Err(GeometryError::CounterClockwise(area));
        }
        // Convex and simple: every turn has the same (positive) sign.
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = corners[(i + 2) % 4];
            if b.sub(a).cross(c.sub(b)) <= 0.0 {
                return Err(GeometryError::NotConvex);
            }
        }
        Ok(Self { corners })
    }

    /// Like [`from_corners`](Self::from_corners) but accepts either winding.
    pub fn from_corners_any_winding(mut corners: [Point; 4]) -> Result<Self, GeometryError> {
        if signed_area(&corners) < 0.0 {
            corners.reverse();
        }
        Self::from_corners(corners)
    }

    /// Builds the rectangle `(cx, cy, w, h, θ)`; the first edge has length
    /// `w` and direction `θ`.
    pub fn from_rotated_rect(r: RotatedRect) -> Result<Self, GeometryError> {
        let (s, c) = r.angle.sin_cos();
        let hw = r.width / 2.0;
        let hh = r.height / 2.0;
        let local = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
        let corners = local.map(|(lx, ly)| Point::new(r.cx + lx * c - ly * s, r.cy + lx * s + ly * c));
        Self::from_corners(corners)
    }

    pub fn axis_aligned(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::from_corners([
            Point::new(x_min, y_min),
            Point::new(x_max, y_min),
            Point::new(x_max, y_max),
            Point::new(x_min, y_max),
        ])
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn center(&self) -> Point {
        let sx: f64 = self.corners.iter().map(|p| p.x).sum();
        let sy: f64 = self.corners.iter().map(|p| p.y).sum();
        Point::new(sx / 4.0, sy / 4.0)
    }

    /// Length of the first edge.
    pub fn width(&self) -> f64 {
        self.corners[1].sub(self.corners[0]).norm()
    }

    /// Length of the second edge.
    pub fn height(&self) -> f64 {
        self.corners[2].sub(self.corners[1]).norm()
    }

    /// Direction of the first edge, wrapped into `(-π/2, π/2]`.
    pub fn angle(&self) -> f64 {
        let d = self.corners[1].sub(self.corners[0]);
        wrap_half_pi(d.y.atan2(d.x))
    }

    pub fn rotated_rect(&self) -> RotatedRect {
        let c = self.center();
        RotatedRect {
            cx: c.x,
            cy: c.y,
            width: self.width(),
            height: self.height(),
            angle: self.angle(),
        }
    }

    /// Largest of width and height.
    pub fn max_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            corners: self.corners.map(|p| Point::new(p.x + dx, p.y + dy)),
        }
    }

    /// Rotation about `pivot` by `theta` radians; winding is preserved.
    pub fn rotated_about(&self, pivot: Point, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            corners: self.corners.map(|p| {
                let d = p.sub(pivot);
                Point::new(pivot.x + d.x * c - d.y * s, pivot.y + d.x * s + d.y * c)
            }),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            corners: self.corners.map(|p| Point::new(p.x * factor, p.y * factor)),
        }
    }

    /// True if `p` lies inside or on the boundary.
    pub fn contains(&self, p: Point) -> bool {
        (0..4).all(|i| {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            b.sub(a).cross(p.sub(a)) >= 0.0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl AxisAlignedBox {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn to_oriented(&self) -> Result<OrientedBox, GeometryError> {
        OrientedBox::axis_aligned(self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// Which box representation a computation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoxMode {
    #[default]
    Obb,
    Hbb,
}

impl std::fmt::Display for BoxMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoxMode::Obb => f.write_str("OBB"),
            BoxMode::Hbb => f.write_str("HBB"),
        }
    }
}

pub fn obb_area(b: &OrientedBox) -> f64 {
    signed_area(b.corners()).abs()
}

pub fn obb_to_hbb(b: &OrientedBox) -> AxisAlignedBox {
    let c = b.corners();
    let fold = |f: fn(f64, f64) -> f64, sel: fn(&Point) -> f64, init: f64| c.iter().map(sel).fold(init, f);
    AxisAlignedBox {
        x_min: fold(f64::min, |p| p.x, f64::INFINITY),
        y_min: fold(f64::min, |p| p.y, f64::INFINITY),
        x_max: fold(f64::max, |p| p.x, f64::NEG_INFINITY),
        y_max: fold(f64::max, |p| p.y, f64::NEG_INFINITY),
    }
}

pub fn hbb_iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Clips the convex polygon `subject` against the convex polygon `clip`
/// (both positively oriented) with Sutherland–Hodgman.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b.sub(a);
        let side = |p: Point| edge.cross(p.sub(a));
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

fn cmp_boxes(a: &OrientedBox, b: &OrientedBox) -> Ordering {
    for (p, q) in a.corners().iter().zip(b.corners()) {
        let o = p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Area of the intersection of two oriented boxes.
pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // Canonical argument order makes the result exactly symmetric.
    let (first, second) = if cmp_boxes(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let poly = clip_convex(first.corners(), second.corners());
    signed_area(&poly).max(0.0)
}

/// Intersection over union of two oriented boxes by exact convex clipping.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64, GeometryError> {
    let (area_a, area_b) = (obb_area(a), obb_area(b));
    for area in [area_a, area_b] {
        if !(area >= MIN_AREA) {
            return Err(GeometryError::Degenerate(area));
        }
    }
    if a == b {
        return Ok(1.0);
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// IoU under the chosen box representation.
pub fn box_iou(a: &OrientedBox, b: &OrientedBox, mode: BoxMode) -> Result<f64, GeometryError> {
    match mode {
        BoxMode::Obb => rotated_iou(a, b),
        BoxMode::Hbb => {
            let (ha, hb) = (obb_to_hbb(a), obb_to_hbb(b));
            if ha.area() < MIN_AREA || hb.area() < MIN_AREA {
                return Err(GeometryError::Degenerate(ha.area().min(hb.area())));
            }
            Ok(hbb_iou(&ha, &hb))
        }
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.sub(Point::new(a.x + t * ab.x, a.y + t * ab.y)).norm()
}

/// Shortest distance between the boundaries of two boxes; zero when they
/// touch or overlap.
pub fn boundary_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a.corners().iter().any(|&p| b.contains(p)) || b.corners().iter().any(|&p| a.contains(p)) {
        return 0.0;
    }
    if intersection_area(a, b) > 0.0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (x, y) in [(a, b), (b, a)] {
        let yc = y.corners();
        for &p in x.corners() {
            for i in 0..4 {
                best = best.min(point_segment_distance(p, yc[i], yc[(i + 1) % 4]));
            }
        }
    }
    best
}

/// Number of entries in a [`PairSpatialFeature`].
pub const PAIR_SPATIAL_DIM: usize = 9;

/// Spatial half of a pair feature vector.
///
/// Layout: `[Δx/W, Δy/H, ln(w_o/w_s), ln(h_o/h_s), area_s/(WH), area_o/(WH),
/// IoU, center distance / diagonal, angle difference]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSpatialFeature(pub [f64; PAIR_SPATIAL_DIM]);

impl PairSpatialFeature {
    pub const IOU: usize = 6;
    pub const DISTANCE: usize = 7;
    pub const ANGLE: usize = 8;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn pair_spatial_feature(
    subject: &OrientedBox,
    object: &OrientedBox,
    width: f64,
    height: f64,
) -> Result<PairSpatialFeature, GeometryError> {
    if !(width > 0.0 && height > 0.0) {
        return Err(GeometryError::BadImageSize(width, height));
    }
    let iou = rotated_iou(subject, object)?;
    let (s, o) = (subject.rotated_rect(), object.rotated_rect());
    let image_area = width * height;
    let diag = width.hypot(height);
    let dist = (o.cx - s.cx).hypot(o.cy - s.cy) / diag;
    Ok(PairSpatialFeature([
        (o.cx - s.cx) / width,
        (o.cy - s.cy) / height,
        (o.width / s.width).ln(),
        (o.height / s.height).ln(),
        obb_area(subject) / image_area,
        obb_area(object) / image_area,
        iou,
        dist.clamp(0.0, 1.0),
        wrap_half_pi(o.angle - s.angle),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> OrientedBox {
        OrientedBox::axis_aligned(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn areas() {
        assert_eq!(obb_area(&unit_square()), 1.0);
        let r = OrientedBox::axis_aligned(0.0, 0.0, 10.0, 4.0).unwrap();
        assert_eq!(obb_area(&r), 40.0);
        for k in 0..12 {
            let rot = unit_square().rotated_about(Point::new(0.3, -2.0), k as f64 * 0.37);
            assert!((obb_area(&rot) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_corners() {
        let ccw = [Point::new(0.0, 0.0), Point::new(0.0, 1.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0)];
        assert!(matches!(OrientedBox::from_corners(ccw), Err(GeometryError::CounterClockwise(_))));
        assert!(OrientedBox::from_corners_any_winding(ccw).is_ok());
        let flat = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0), Point::new(3.0, 0.0)];
        assert!(matches!(OrientedBox::from_corners(flat), Err(GeometryError::Degenerate(_))));
        let bowtie = [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert!(OrientedBox::from_corners(bowtie).is_err());
        let nan = [Point::new(f64::NAN, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        assert_eq!(OrientedBox::from_corners(nan), Err(GeometryError::NonFinite));
    }

    #[test]
    fn iou_basic_cases() {
        let a = unit_square();
        assert_eq!(rotated_iou(&a, &a).unwrap(), 1.0);
        let far = a.translated(5.0, 5.0);
        assert_eq!(rotated_iou(&a, &far).unwrap(), 0.0);
        let shifted = a.translated(0.5, 0.0);
        assert!((rotated_iou(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rect_round_trip_and_angle_range() {
        let r = RotatedRect { cx: 40.0, cy: 25.0, width: 30.0, height: 8.0, angle: 0.6 };
        let b = OrientedBox::from_rotated_rect(r).unwrap();
        let back = b.rotated_rect();
        assert!((back.cx - 40.0).abs() < 1e-9 && (back.width - 30.0).abs() < 1e-9);
        assert!((back.angle - 0.6).abs() < 1e-12);
        let r2 = RotatedRect { angle: 2.5, ..r };
        let a2 = OrientedBox::from_rotated_rect(r2).unwrap().angle();
        assert!(a2 > -FRAC_PI_2 && a2 <= FRAC_PI_2);
        assert!((wrap_half_pi(2.5) - (2.5 - PI)).abs() < 1e-12);
        assert_eq!(wrap_half_pi(FRAC_PI_2), FRAC_PI_2);
        assert!((wrap_half_pi(-FRAC_PI_2) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn hbb_conversion() {
        let r = OrientedBox::axis_aligned(2.0, 3.0, 7.0, 5.0).unwrap();
        assert_eq!(obb_to_hbb(&r), AxisAlignedBox { x_min: 2.0, y_min: 3.0, x_max: 7.0, y_max: 5.0 });
        let d = unit_square().rotated_about(Point::new(0.5, 0.5), PI / 4.0);
        let h = obb_to_hbb(&d);
        let s = 2f64.sqrt();
        assert!((h.x_max - h.x_min - s).abs() < 1e-12 && (h.y_max - h.y_min - s).abs() < 1e-12);
        assert!((h.center().x - 0.5).abs() < 1e-12 && (h.center().y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gap_distance() {
        let a = OrientedBox::axis_aligned(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!((boundary_gap(&a, &a.translated(40.0, 0.0)) - 30.0).abs() < 1e-12);
        assert_eq!(boundary_gap(&a, &a.translated(5.0, 5.0)), 0.0);
        let inner = OrientedBox::axis_aligned(2.0, 2.0, 3.0, 3.0).unwrap();
        assert_eq!(boundary_gap(&a, &inner), 0.0);
    }

    #[test]
    fn pair_feature_cases() {
        let s = OrientedBox::from_rotated_rect(RotatedRect { cx: 50.0, cy: 50.0, width: 10.0, height: 4.0, angle: 0.3 }).unwrap();
        let f = pair_spatial_feature(&s, &s, 100.0, 100.0).unwrap();
        for i in [0, 1, 2, 3, 7, 8] {
            assert!(f.0[i].abs() < 1e-12, "entry {i} = {}", f.0[i]);
        }
        assert_eq!(f.0[PairSpatialFeature::IOU], 1.0);
        let o = OrientedBox::from_rotated_rect(RotatedRect { cx: 50.0, cy: 50.0, width: 20.0, height: 4.0, angle: 0.3 }).unwrap();
        let f = pair_spatial_feature(&s, &o, 100.0, 100.0).unwrap();
        assert!((f.0[2] - 2f64.ln()).abs() < 1e-12);
        let far = s.translated(40.0, 40.0);
        let f = pair_spatial_feature(&s, &far, 100.0, 100.0).unwrap();
        assert_eq!(f.0[PairSpatialFeature::IOU], 0.0);
        assert!(f.0[PairSpatialFeature::DISTANCE] > 0.0);
        assert!(pair_spatial_feature(&s, &o, 0.0, 10.0).is_err());
    }
}
