//! Planar primitives shared by every metric: poses, oriented boxes and simple
//! polygons, with separating-axis overlap and inclusive containment tests.
//!
//! All comparisons are exact (no epsilon inflation). Touching boundaries count
//! as overlap for boxes and as inside for polygons.

use std::f64::consts::PI;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`. Values already in range are returned
/// untouched so the operation is idempotent bit-for-bit.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Smallest signed rotation taking `from` to `to`, in `(-π, π]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    normalize_angle(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Add for Vec2 {
    type Output = Vec2;

    fn add(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x + other.x, self.y + other.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }
}

/// Ego-frame pose: +x forward, +y left, heading in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub const fn origin() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// A 3D box of which only the planar footprint takes part in overlap tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub center_x: f64,
    pub center_y: f64,
    pub center_z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub heading: f64,
    pub class_name: String,
}

impl OrientedBox {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        center_x: f64,
        center_y: f64,
        center_z: f64,
        length: f64,
        width: f64,
        height: f64,
        heading: f64,
        class_name: impl Into<String>,
    ) -> Result<Self> {
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(Error::data(format!(
                "box extents must be positive, got l={length} w={width} h={height}"
            )));
        }
        let values = [center_x, center_y, center_z, length, width, height, heading];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("box fields must be finite"));
        }
        Ok(Self {
            center_x,
            center_y,
            center_z,
            length,
            width,
            height,
            heading: normalize_angle(heading),
            class_name: class_name.into(),
        })
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.center_x, self.center_y)
    }

    /// Unit vector along the box length.
    pub fn axis_long(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }

    /// Unit vector along the box width (left of heading).
    pub fn axis_lat(&self) -> Vec2 {
        Vec2::new(-self.heading.sin(), self.heading.cos())
    }

    /// Footprint corners in counter-clockwise order starting rear-right.
    pub fn corners(&self) -> [Vec2; 4] {
        let c = self.center();
        let u = self.axis_long().scale(self.length / 2.0);
        let v = self.axis_lat().scale(self.width / 2.0);
        [c.sub(u).sub(v), c.add(u).sub(v), c.add(u).add(v), c.sub(u).add(v)]
    }

    /// Copy moved to a new planar center, keeping extents and heading.
    pub fn with_center(&self, x: f64, y: f64) -> Self {
        Self {
            center_x: x,
            center_y: y,
            ..self.clone()
        }
    }

    fn projected_radius(&self, axis: Vec2) -> f64 {
        (self.length / 2.0) * self.axis_long().dot(axis).abs() + (self.width / 2.0) * self.axis_lat().dot(axis).abs()
    }
}

/// Separating-axis test over the four face normals of the two footprints.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let delta = b.center().sub(a.center());
    let axes = [a.axis_long(), a.axis_lat(), b.axis_long(), b.axis_lat()];
    axes.iter().all(|&axis| {
        let distance = delta.dot(axis).abs();
        distance <= a.projected_radius(axis) + b.projected_radius(axis)
    })
}

/// Places an ego footprint at `pose`.
pub fn footprint_at(pose: &Pose2D, length: f64, width: f64) -> OrientedBox {
    debug_assert!(length > 0.0 && width > 0.0);
    OrientedBox {
        center_x: pose.x,
        center_y: pose.y,
        center_z: 0.0,
        length,
        width,
        height: 1.5,
        heading: pose.heading,
        class_name: "ego".to_string(),
    }
}

/// Simple, counter-clockwise polygon with nonzero area.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl Polygon {
    /// Validates and stores the ring. Clockwise input is reversed.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::data(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::data("polygon vertices must be finite"));
        }
        let mut poly = Self { vertices };
        let area = poly.signed_area();
        if area == 0.0 {
            return Err(Error::data("polygon has zero area"));
        }
        if !poly.is_simple() {
            return Err(Error::data("polygon is self-intersecting"));
        }
        if area < 0.0 {
            poly.vertices.reverse();
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.cross(b)).sum::<f64>() / 2.0
    }

    pub fn centroid(&self) -> Vec2 {
        let area = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (a, b) in self.edges() {
            let k = a.cross(b);
            cx += (a.x + b.x) * k;
            cy += (a.y + b.y) * k;
        }
        Vec2::new(cx / (6.0 * area), cy / (6.0 * area))
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Sorted y-coordinates where the vertical line at `x` crosses the boundary.
    pub fn vertical_crossings(&self, x: f64) -> Vec<f64> {
        let mut ys = Vec::new();
        for (a, b) in self.edges() {
            let (lo, hi) = if a.x <= b.x { (a, b) } else { (b, a) };
            if lo.x == hi.x {
                continue;
            }
            // half-open so a shared vertex is counted once
            if x >= lo.x && x < hi.x {
                let t = (x - lo.x) / (hi.x - lo.x);
                ys.push(lo.y + t * (hi.y - lo.y));
            }
        }
        ys.sort_by(|a, b| a.total_cmp(b));
        ys
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    let shared = if j == i + 1 { a2 } else { a1 };
                    let (p, q) = if j == i + 1 { (a1, b2) } else { (a2, b1) };
                    let d1 = p.sub(shared);
                    let d2 = q.sub(shared);
                    if d1.cross(d2) == 0.0 && d1.dot(d2) > 0.0 {
                        return false;
                    }
                    continue;
                }
                if segments_intersect(a1, a2, b1, b2) {
                    return false;
                }
            }
        }
        true
    }
}

fn orientation(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    orientation(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn segments_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = orientation(b1, b2, a1);
    let d2 = orientation(b1, b2, a2);
    let d3 = orientation(a1, a2, b1);
    let d4 = orientation(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a1, b1, b2) || on_segment(a2, b1, b2) || on_segment(b1, a1, a2) || on_segment(b2, a1, a2)
}

/// Inclusive point-in-polygon: boundary points are inside. Uses the nonzero
/// winding rule, which equals even-odd for simple polygons.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    let mut winding = 0i32;
    for (a, b) in poly.edges() {
        if on_segment(p, a, b) {
            return true;
        }
        if a.y <= p.y {
            if b.y > p.y && orientation(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && orientation(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// True iff all four footprint corners of `b` are inside `poly`.
pub fn box_in_polygon(b: &OrientedBox, poly: &Polygon) -> bool {
    b.corners().iter().all(|&c| point_in_polygon(c, poly))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aabb(x: f64, y: f64, l: f64, w: f64) -> OrientedBox {
        OrientedBox::new(x, y, 0.0, l, w, 1.0, 0.0, "car").unwrap()
    }

    fn square(size: f64) -> Polygon {
        Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(size, 0.0),
            Vec2::new(size, size),
            Vec2::new(0.0, size),
        ])
        .unwrap()
    }

    #[test]
    fn box_overlaps_itself() {
        let b = OrientedBox::new(1.0, 2.0, 0.0, 4.0, 2.0, 1.5, 0.7, "car").unwrap();
        assert!(boxes_overlap(&b, &b));
    }

    #[test]
    fn distant_boxes_do_not_overlap() {
        assert!(!boxes_overlap(&aabb(0.0, 0.0, 2.0, 2.0), &aabb(10.0, 0.0, 2.0, 2.0)));
    }

    #[test]
    fn touching_faces_count_as_overlap() {
        assert!(boxes_overlap(&aabb(0.0, 0.0, 2.0, 2.0), &aabb(2.0, 0.0, 2.0, 2.0)));
        assert!(!boxes_overlap(
            &aabb(0.0, 0.0, 2.0, 2.0),
            &aabb(2.0 + 1e-9, 0.0, 2.0, 2.0)
        ));
    }

    #[test]
    fn rotated_box_separated_along_its_own_axis() {
        // diamond whose corner points at an axis-aligned box but stops short
        let a = aabb(0.0, 0.0, 2.0, 2.0);
        let d = OrientedBox::new(2.5, 0.0, 0.0, 1.0, 1.0, 1.0, PI / 4.0, "car").unwrap();
        // diamond tip at x = 2.5 - 0.7071 > 1
        assert!(!boxes_overlap(&a, &d));
        let d2 = d.with_center(1.6, 0.0);
        assert!(boxes_overlap(&a, &d2));
    }

    #[test]
    fn footprint_corners_axis_aligned() {
        let b = footprint_at(&Pose2D::origin(), 4.6, 1.9);
        let c = b.corners();
        let expect = [(-2.3, -0.95), (2.3, -0.95), (2.3, 0.95), (-2.3, 0.95)];
        for (got, want) in c.iter().zip(expect) {
            assert!((got.x - want.0).abs() < 1e-12 && (got.y - want.1).abs() < 1e-12);
        }
        assert_eq!(b.class_name, "ego");
    }

    #[test]
    fn footprint_quarter_turn_swaps_extents() {
        let b = footprint_at(&Pose2D::new(0.0, 0.0, PI / 2.0), 4.6, 1.9);
        let xs: Vec<f64> = b.corners().iter().map(|c| c.x.abs()).collect();
        let ys: Vec<f64> = b.corners().iter().map(|c| c.y.abs()).collect();
        assert!(xs.iter().all(|x| (x - 0.95).abs() < 1e-12));
        assert!(ys.iter().all(|y| (y - 2.3).abs() < 1e-12));
    }

    #[test]
    fn normalize_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
        for a in [-100.0, -3.2, 0.0, 2.0, 9.5, 1e6] {
            let once = normalize_angle(a);
            assert!(once > -PI && once <= PI);
            assert_eq!(normalize_angle(once), once);
        }
    }

    #[test]
    fn polygon_rejects_degenerate_input() {
        assert!(Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
        assert!(Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)]).is_err());
        // bow-tie
        assert!(Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0)
        ])
        .is_err());
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let p = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(p.signed_area() > 0.0);
    }

    #[test]
    fn centroid_inside_and_far_point_outside() {
        let p = square(4.0);
        assert!(point_in_polygon(p.centroid(), &p));
        assert!(!point_in_polygon(Vec2::new(5.0, 2.0), &p));
        assert!(!point_in_polygon(Vec2::new(-1.0, -1.0), &p));
    }

    #[test]
    fn boundary_counts_as_inside() {
        let p = square(4.0);
        assert!(point_in_polygon(Vec2::new(4.0, 2.0), &p));
        assert!(point_in_polygon(Vec2::new(0.0, 0.0), &p));
        assert!(point_in_polygon(Vec2::new(2.0, 4.0), &p));
    }

    #[test]
    fn concave_notch_is_outside() {
        // U shape opening upward
        let p = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(6.0, 0.0),
            Vec2::new(6.0, 6.0),
            Vec2::new(4.0, 6.0),
            Vec2::new(4.0, 2.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(2.0, 6.0),
            Vec2::new(0.0, 6.0),
        ])
        .unwrap();
        assert!(!point_in_polygon(Vec2::new(3.0, 4.0), &p));
        assert!(point_in_polygon(Vec2::new(1.0, 4.0), &p));
        assert!(point_in_polygon(Vec2::new(3.0, 1.0), &p));
    }

    #[test]
    fn box_in_corridor() {
        let corridor = Polygon::new(vec![
            Vec2::new(-10.0, -3.5),
            Vec2::new(50.0, -3.5),
            Vec2::new(50.0, 3.5),
            Vec2::new(-10.0, 3.5),
        ])
        .unwrap();
        let centered = footprint_at(&Pose2D::new(10.0, 0.0, 0.0), 4.6, 1.9);
        assert!(box_in_polygon(&centered, &corridor));
        let on_edge = footprint_at(&Pose2D::new(10.0, 3.5, 0.0), 4.6, 1.9);
        assert!(!box_in_polygon(&on_edge, &corridor));
    }

    #[test]
    fn vertical_crossings_of_corridor() {
        let corridor = Polygon::new(vec![
            Vec2::new(-10.0, -3.5),
            Vec2::new(50.0, -3.5),
            Vec2::new(50.0, 3.5),
            Vec2::new(-10.0, 3.5),
        ])
        .unwrap();
        assert_eq!(corridor.vertical_crossings(5.0), vec![-3.5, 3.5]);
        assert!(corridor.vertical_crossings(60.0).is_empty());
    }
}
