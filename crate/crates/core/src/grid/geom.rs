//! Planar predicates shared by every module: points, barycentric weights,
//! point-to-segment distance and triangle areas.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Degenerate-triangle threshold on |signed area|, in px².
pub const DEGENERATE_AREA: f64 = 1e-9;

/// A position in pixel units; origin top-left, x rightward, y downward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    #[inline]
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn l1(self) -> f64 {
        self.x.abs() + self.y.abs()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

impl std::ops::AddAssign for Point {
    #[inline]
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl std::ops::SubAssign for Point {
    #[inline]
    fn sub_assign(&mut self, o: Point) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// Affine weights of a point with respect to a triangle `(a, b, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycentricCoords {
    pub w_a: f64,
    pub w_b: f64,
    pub w_c: f64,
}

impl BarycentricCoords {
    /// All weights in `[0, 1]`, i.e. the point lies inside or on the triangle.
    #[inline]
    pub fn is_inside(&self) -> bool {
        self.min_weight() >= 0.0
    }

    #[inline]
    pub fn min_weight(&self) -> f64 {
        self.w_a.min(self.w_b).min(self.w_c)
    }

    pub fn reconstruct(&self, tri: &[Point; 3]) -> Point {
        tri[0] * self.w_a + tri[1] * self.w_b + tri[2] * self.w_c
    }
}

/// Shoelace signed area; positive under the grid's construction winding.
#[inline]
pub fn triangle_signed_area(tri: &[Point; 3]) -> f64 {
    0.5 * (tri[1] - tri[0]).cross(tri[2] - tri[0])
}

/// Barycentric weights of `p`, or `None` when the triangle is degenerate.
pub fn barycentric(p: Point, tri: &[Point; 3]) -> Option<BarycentricCoords> {
    let [a, b, c] = *tri;
    let det = (b - a).cross(c - a);
    if (0.5 * det).abs() <= DEGENERATE_AREA {
        return None;
    }
    let w_b = (p - a).cross(c - a) / det;
    let w_c = (b - a).cross(p - a) / det;
    Some(BarycentricCoords { w_a: 1.0 - w_b - w_c, w_b, w_c })
}

/// L1 norm of the displacement from `p` to its Euclidean-closest point on
/// segment `[start, end]`. Zero-length segments behave as a point.
pub fn segment_l1_distance(p: Point, start: Point, end: Point) -> f64 {
    let u = end - start;
    let w = p - start;
    let len_sq = u.norm_sq();
    let t = if len_sq > 0.0 { (w.dot(u) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    (w - u * t).l1()
}

/// Closest-point projection onto a segment with the subgradient of the L1
/// displacement norm with respect to both endpoints.
#[derive(Clone, Copy, Debug)]
pub struct SegmentProjection {
    pub distance: f64,
    /// Segment parameter of the closest point, in `[0, 1]`.
    pub t: f64,
    pub grad_start: Point,
    pub grad_end: Point,
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn project_onto_segment(p: Point, start: Point, end: Point) -> SegmentProjection {
    let u = end - start;
    let w = p - start;
    let len_sq = u.norm_sq();
    let raw_t = if len_sq > 0.0 { w.dot(u) / len_sq } else { 0.0 };
    let t = raw_t.clamp(0.0, 1.0);
    let q = start + u * t;
    let d = p - q;
    let distance = d.l1();
    // dD/dq
    let g = Point::new(-sign0(d.x), -sign0(d.y));
    let (grad_start, grad_end) = if len_sq == 0.0 || raw_t <= 0.0 {
        (g, Point::ZERO)
    } else if raw_t >= 1.0 {
        (Point::ZERO, g)
    } else {
        // q = start + t u with t depending on both endpoints.
        let gu = g.dot(u) / len_sq;
        let r = w - u * (2.0 * t);
        let grad_end = g * t + r * gu;
        let grad_start = g * (1.0 - t) - (u + r) * gu;
        (grad_start, grad_end)
    };
    SegmentProjection { distance, t, grad_start, grad_end }
}

/// Bilinear interpolation helper over a row-major `width × height` scalar
/// field whose samples sit at pixel centers `(x + 0.5, y + 0.5)`.
/// Query positions are clamped to the rectangle spanned by the centers.
pub fn bilinear_sample(values: &[f64], width: usize, height: usize, p: Point) -> f64 {
    debug_assert_eq!(values.len(), width * height);
    let u = (p.x - 0.5).clamp(0.0, (width - 1) as f64);
    let v = (p.y - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = (u.floor() as usize).min(width.saturating_sub(2));
    let y0 = (v.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let at = |x: usize, y: usize| values[y * width + x];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}
