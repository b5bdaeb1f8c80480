//! Convex bodies for the source domain and the target set.
//!
//! Every body answers the same queries: signed distance, support function,
//! outward normals, membership and boundary sampling. Shapes are kept
//! analytic so that the support function and signed distance are exact.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Point2::new(c, s)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2-D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise quarter turn.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        Point2::new(self.x / n, self.y / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    fn mul(self, p: Point2) -> Point2 {
        p * self
    }
}

/// Row-major 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 {
            m: [[a, b], [c, d]],
        }
    }

    pub fn from_row_major(v: [f64; 4]) -> Self {
        Mat2::new(v[0], v[1], v[2], v[3])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            self.m[0][0] * p.x + self.m[0][1] * p.y,
            self.m[1][0] * p.x + self.m[1][1] * p.y,
        )
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.m[1][1] / det,
            -self.m[0][1] / det,
            -self.m[1][0] / det,
            self.m[0][0] / det,
        ))
    }

    pub fn asymmetry(&self) -> f64 {
        (self.m[0][1] - self.m[1][0]).abs()
    }

    /// Eigen-decomposition of the symmetric part: `(lambda_min, lambda_max, v_max)`
    /// where `v_max` is the unit eigenvector of `lambda_max`.
    pub fn sym_eigen(&self) -> (f64, f64, Point2) {
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.5 * (a - d)).hypot(b);
        let hi = mean + rad;
        let lo = mean - rad;
        let v = if b == 0.0 {
            if a >= d {
                Point2::new(1.0, 0.0)
            } else {
                Point2::new(0.0, 1.0)
            }
        } else {
            Point2::new(hi - d, b).normalized()
        };
        (lo, hi, v)
    }
}

/// Ellipse `{center + M z : |z| <= 1}` with `M` symmetric positive definite,
/// stored in principal axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    center: Point2,
    matrix: Mat2,
    /// Unit direction of the major axis.
    major: Point2,
    /// Semi-axes, `semi[0] >= semi[1] > 0`.
    semi: [f64; 2],
}

/// Convex polygon with counterclockwise vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2>,
    /// Outward unit normal of edge `i -> i+1`.
    normals: Vec<Point2>,
}

/// Planar convex body, immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexBody {
    Disk {
        center: Point2,
        radius: f64,
    },
    Ellipse(Ellipse),
    Square {
        center: Point2,
        half_width: f64,
    },
    Polygon(Polygon),
    /// Degenerate target; admitted although not uniformly convex.
    Segment {
        a: Point2,
        b: Point2,
    },
}

fn check_point(p: Point2) -> Result<()> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidShape(format!("non-finite point {p:?}")))
    }
}

impl ConvexBody {
    pub fn disk(center: Point2, radius: f64) -> Result<Self> {
        check_point(center)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidShape(format!("disk radius {radius}")));
        }
        Ok(ConvexBody::Disk { center, radius })
    }

    pub fn unit_disk() -> Self {
        ConvexBody::Disk {
            center: Point2::ZERO,
            radius: 1.0,
        }
    }

    /// Image of the unit disk under the symmetric positive definite `matrix`.
    pub fn ellipse(center: Point2, matrix: Mat2) -> Result<Self> {
        check_point(center)?;
        if matrix.asymmetry() > 1e-12 * matrix.trace().abs().max(1.0) {
            return Err(Error::InvalidShape(format!(
                "ellipse matrix must be symmetric: {matrix:?}"
            )));
        }
        let (lo, hi, v) = matrix.sym_eigen();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::InvalidShape(format!(
                "ellipse matrix must be positive definite: {matrix:?}"
            )));
        }
        Ok(ConvexBody::Ellipse(Ellipse {
            center,
            matrix,
            major: v,
            semi: [hi, lo],
        }))
    }

    pub fn square(center: Point2, half_width: f64) -> Result<Self> {
        check_point(center)?;
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidShape(format!(
                "square half-width {half_width}"
            )));
        }
        Ok(ConvexBody::Square { center, half_width })
    }

    /// Convex polygon from counterclockwise vertices.
    pub fn polygon(vertices: Vec<Point2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidShape(format!(
                "polygon needs 3 vertices, got {n}"
            )));
        }
        for &v in &vertices {
            check_point(v)?;
        }
        let mut normals = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e = b - a;
            if e.norm() == 0.0 {
                return Err(Error::InvalidShape("repeated polygon vertex".into()));
            }
            if e.cross(c - b) <= 0.0 {
                return Err(Error::InvalidShape(
                    "polygon must be strictly convex and counterclockwise".into(),
                ));
            }
            normals.push(Point2::new(e.y, -e.x).normalized());
        }
        Ok(ConvexBody::Polygon(Polygon { vertices, normals }))
    }

    pub fn segment(a: Point2, b: Point2) -> Result<Self> {
        check_point(a)?;
        check_point(b)?;
        if a == b {
            return Err(Error::InvalidShape("segment endpoints coincide".into()));
        }
        Ok(ConvexBody::Segment { a, b })
    }

    /// Regular polygon with `sides` vertices, the first one at angle `phase`.
    pub fn regular_polygon(
        center: Point2,
        circumradius: f64,
        sides: usize,
        phase: f64,
    ) -> Result<Self> {
        let vertices = (0..sides)
            .map(|k| {
                center
                    + Point2::from_angle(phase + 2.0 * PI * k as f64 / sides as f64) * circumradius
            })
            .collect();
        ConvexBody::polygon(vertices)
    }

    /// Intersection of the disk (center, radius) with the half-plane `y <= cut`,
    /// as a polygon with `arc_points` vertices along the circular part.
    pub fn bowl(center: Point2, radius: f64, cut: f64, arc_points: usize) -> Result<Self> {
        let dy = cut - center.y;
        if !(dy.abs() < radius) {
            return Err(Error::InvalidShape("bowl cut misses the disk".into()));
        }
        let dx = (radius * radius - dy * dy).sqrt();
        let start = dy.atan2(-dx);
        let end = dy.atan2(dx) + 2.0 * PI;
        let mut vertices: Vec<Point2> = (0..arc_points)
            .map(|k| {
                let t = start + (end - start) * k as f64 / (arc_points - 1) as f64;
                center + Point2::from_angle(t) * radius
            })
            .collect();
        vertices.dedup();
        ConvexBody::polygon(vertices)
    }

    /// Convex hull of a disk and an apex below it, with the given full opening
    /// angle at the apex.
    pub fn cone(apex: Point2, cap_center: Point2, opening: f64, arc_points: usize) -> Result<Self> {
        let axis = cap_center - apex;
        let dist = axis.norm();
        let radius = dist * (0.5 * opening).sin();
        let down = (-axis).normalized();
        let base = down.y.atan2(down.x);
        // tangent points sit at +-(pi/2 - opening/2) from the downward axis
        let half = 0.5 * PI - 0.5 * opening;
        let start = base + half;
        let end = base + 2.0 * PI - half;
        let mut vertices = vec![apex];
        vertices.extend((0..arc_points).map(|k| {
            let t = start + (end - start) * k as f64 / (arc_points - 1) as f64;
            cap_center + Point2::from_angle(t) * radius
        }));
        ConvexBody::polygon(vertices)
    }

    pub fn diameter(&self) -> f64 {
        match self {
            ConvexBody::Disk { radius, .. } => 2.0 * radius,
            ConvexBody::Ellipse(e) => 2.0 * e.semi[0],
            ConvexBody::Square { half_width, .. } => 2.0 * std::f64::consts::SQRT_2 * half_width,
            ConvexBody::Polygon(p) => {
                let mut d: f64 = 0.0;
                for (i, a) in p.vertices.iter().enumerate() {
                    for b in &p.vertices[i + 1..] {
                        d = d.max(a.distance(*b));
                    }
                }
                d
            }
            ConvexBody::Segment { a, b } => a.distance(*b),
        }
    }

    pub fn tol_boundary(&self) -> f64 {
        1e-9 * self.diameter()
    }

    /// Area centroid (midpoint for a segment).
    pub fn centroid(&self) -> Point2 {
        match self {
            ConvexBody::Disk { center, .. } | ConvexBody::Square { center, .. } => *center,
            ConvexBody::Ellipse(e) => e.center,
            ConvexBody::Polygon(p) => {
                let v = &p.vertices;
                let mut area = 0.0;
                let mut c = Point2::ZERO;
                for i in 0..v.len() {
                    let a = v[i];
                    let b = v[(i + 1) % v.len()];
                    let w = a.cross(b);
                    area += w;
                    c = c + (a + b) * w;
                }
                c * (1.0 / (3.0 * area))
            }
            ConvexBody::Segment { a, b } => (*a + *b) * 0.5,
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let hx = self.support_function(Point2::new(1.0, 0.0));
        let lx = -self.support_function(Point2::new(-1.0, 0.0));
        let hy = self.support_function(Point2::new(0.0, 1.0));
        let ly = -self.support_function(Point2::new(0.0, -1.0));
        (Point2::new(lx, ly), Point2::new(hx, hy))
    }

    /// Signed Euclidean distance to the boundary, negative inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        match self {
            ConvexBody::Disk { center, radius } => (p - *center).norm() - radius,
            ConvexBody::Ellipse(e) => e.closest(p).1,
            ConvexBody::Square { center, half_width } => {
                let dx = (p.x - center.x).abs() - half_width;
                let dy = (p.y - center.y).abs() - half_width;
                let outside = Point2::new(dx.max(0.0), dy.max(0.0)).norm();
                outside + dx.max(dy).min(0.0)
            }
            ConvexBody::Polygon(poly) => poly.signed_distance(p),
            ConvexBody::Segment { a, b } => p.distance(closest_on_segment(*a, *b, p)),
        }
    }

    /// Gradient of the signed distance, a unit vector wherever it is defined.
    /// Kinks (e.g. the medial axis) resolve to one of the one-sided gradients.
    pub fn signed_distance_gradient(&self, p: Point2) -> Point2 {
        match self {
            ConvexBody::Disk { center, .. } => {
                let d = p - *center;
                if d.norm() == 0.0 {
                    Point2::new(1.0, 0.0)
                } else {
                    d.normalized()
                }
            }
            ConvexBody::Ellipse(e) => {
                let (q, _) = e.closest(p);
                e.normal_at(q)
            }
            ConvexBody::Square { center, half_width } => {
                let q = p - *center;
                let dx = q.x.abs() - half_width;
                let dy = q.y.abs() - half_width;
                let sx = if q.x >= 0.0 { 1.0 } else { -1.0 };
                let sy = if q.y >= 0.0 { 1.0 } else { -1.0 };
                if dx > 0.0 && dy > 0.0 {
                    Point2::new(sx * dx, sy * dy).normalized()
                } else if dx >= dy {
                    Point2::new(sx, 0.0)
                } else {
                    Point2::new(0.0, sy)
                }
            }
            ConvexBody::Polygon(poly) => poly.signed_distance_gradient(p),
            ConvexBody::Segment { a, b } => {
                let q = closest_on_segment(*a, *b, p);
                let d = p - q;
                if d.norm() > 0.0 {
                    d.normalized()
                } else {
                    (*b - *a).perp().normalized()
                }
            }
        }
    }

    /// `sup_{y in body} n . y`; `n` is normalized first.
    pub fn support_function(&self, n: Point2) -> f64 {
        let n = n.normalized();
        match self {
            ConvexBody::Disk { center, radius } => n.dot(*center) + radius,
            ConvexBody::Ellipse(e) => n.dot(e.center) + e.matrix.transpose().apply(n).norm(),
            ConvexBody::Square { center, half_width } => {
                n.dot(*center) + half_width * (n.x.abs() + n.y.abs())
            }
            ConvexBody::Polygon(poly) => poly
                .vertices
                .iter()
                .map(|v| n.dot(*v))
                .fold(f64::NEG_INFINITY, f64::max),
            ConvexBody::Segment { a, b } => n.dot(*a).max(n.dot(*b)),
        }
    }

    /// Largest `|y|` over the body, equal to the maximum of the support function
    /// over unit directions.
    pub fn max_norm(&self) -> f64 {
        match self {
            ConvexBody::Disk { center, radius } => center.norm() + radius,
            ConvexBody::Ellipse(e) => {
                if e.center == Point2::ZERO {
                    e.semi[0]
                } else {
                    // |c + M z| over the unit circle: dense scan then local refinement
                    let f = |t: f64| (e.center + e.matrix.apply(Point2::from_angle(t))).norm();
                    let n = 4096;
                    let (mut best_t, mut best) = (0.0, f64::NEG_INFINITY);
                    for k in 0..n {
                        let t = 2.0 * PI * k as f64 / n as f64;
                        let v = f(t);
                        if v > best {
                            best = v;
                            best_t = t;
                        }
                    }
                    let (mut lo, mut hi) =
                        (best_t - 2.0 * PI / n as f64, best_t + 2.0 * PI / n as f64);
                    for _ in 0..100 {
                        let m1 = lo + (hi - lo) / 3.0;
                        let m2 = hi - (hi - lo) / 3.0;
                        if f(m1) < f(m2) {
                            lo = m1;
                        } else {
                            hi = m2;
                        }
                    }
                    best.max(f(0.5 * (lo + hi)))
                }
            }
            ConvexBody::Square { center, half_width } => {
                (center.x.abs() + half_width).hypot(center.y.abs() + half_width)
            }
            ConvexBody::Polygon(poly) => poly.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max),
            ConvexBody::Segment { a, b } => a.norm().max(b.norm()),
        }
    }

    /// A priori gradient bound `R = safety * max |y|`.
    pub fn gradient_bound(&self, safety: f64) -> f64 {
        safety * self.max_norm()
    }

    /// `gradient_bound` with the default safety factor 1.1.
    pub fn gradient_bound_r(&self) -> f64 {
        self.gradient_bound(1.1)
    }

    pub fn contains(&self, p: Point2) -> bool {
        match self {
            ConvexBody::Segment { .. } => self.signed_distance(p) <= self.tol_boundary(),
            _ => self.signed_distance(p) <= 0.0,
        }
    }

    fn check_on_boundary(&self, p: Point2) -> Result<()> {
        let d = self.signed_distance(p);
        if d.abs() > self.tol_boundary() {
            return Err(Error::NotOnBoundary {
                point: p,
                distance: d,
            });
        }
        Ok(())
    }

    /// Unit outward normal at a boundary point; corners get the angle bisector.
    pub fn outward_normal(&self, p: Point2) -> Result<Point2> {
        self.check_on_boundary(p)?;
        let normals = self.normal_cone_generators(p);
        let sum = normals.iter().fold(Point2::ZERO, |acc, &n| acc + n);
        Ok(sum.normalized())
    }

    /// Outward normals of the faces meeting at a boundary point: one at smooth
    /// points, two at polygon corners.
    pub fn boundary_normals(&self, p: Point2) -> Result<Vec<Point2>> {
        self.check_on_boundary(p)?;
        Ok(self.normal_cone_generators(p))
    }

    fn normal_cone_generators(&self, p: Point2) -> Vec<Point2> {
        let tol = 1e3 * self.tol_boundary();
        match self {
            ConvexBody::Disk { center, .. } => vec![(p - *center).normalized()],
            ConvexBody::Ellipse(e) => vec![e.normal_at(p)],
            ConvexBody::Square { center, half_width } => {
                let q = p - *center;
                let mut out = Vec::with_capacity(2);
                if (q.x.abs() - half_width).abs() <= tol {
                    out.push(Point2::new(q.x.signum(), 0.0));
                }
                if (q.y.abs() - half_width).abs() <= tol {
                    out.push(Point2::new(0.0, q.y.signum()));
                }
                out
            }
            ConvexBody::Polygon(poly) => {
                let mut out = Vec::with_capacity(2);
                for (i, &n) in poly.normals.iter().enumerate() {
                    if (p - poly.vertices[i]).dot(n).abs() <= tol
                        && closest_on_segment(
                            poly.vertices[i],
                            poly.vertices[(i + 1) % poly.vertices.len()],
                            p,
                        )
                        .distance(p)
                            <= tol
                    {
                        out.push(n);
                    }
                }
                out
            }
            ConvexBody::Segment { a, b } => {
                let dir = (*b - *a).normalized();
                if p.distance(*a) <= tol {
                    vec![-dir]
                } else if p.distance(*b) <= tol {
                    vec![dir]
                } else {
                    vec![dir.perp()]
                }
            }
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            ConvexBody::Disk { radius, .. } => 2.0 * PI * radius,
            ConvexBody::Ellipse(e) => e.arclength_table(4096).last().copied().unwrap_or(0.0),
            ConvexBody::Square { half_width, .. } => 8.0 * half_width,
            ConvexBody::Polygon(poly) => {
                let v = &poly.vertices;
                (0..v.len())
                    .map(|i| v[i].distance(v[(i + 1) % v.len()]))
                    .sum()
            }
            ConvexBody::Segment { a, b } => 2.0 * a.distance(*b),
        }
    }

    /// `count` boundary points, approximately uniform in arclength.
    pub fn boundary_sample(&self, count: usize) -> Result<Vec<Point2>> {
        if count < 3 {
            return Err(Error::TooFewSamples(count));
        }
        Ok(match self {
            ConvexBody::Disk { center, radius } => (0..count)
                .map(|k| *center + Point2::from_angle(2.0 * PI * k as f64 / count as f64) * *radius)
                .collect(),
            ConvexBody::Ellipse(e) => e.arclength_sample(count),
            ConvexBody::Square { .. } | ConvexBody::Polygon(_) => {
                let verts = self.corner_list();
                walk_closed(&verts, count)
            }
            ConvexBody::Segment { a, b } => (0..count)
                .map(|k| *a + (*b - *a) * (k as f64 / (count - 1) as f64))
                .collect(),
        })
    }

    /// Boundary points with consecutive spacing at most `spacing`. Polygon
    /// corners are always included.
    pub fn boundary_points_with_spacing(&self, spacing: f64) -> Result<Vec<Point2>> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidShape(format!("boundary spacing {spacing}")));
        }
        match self {
            ConvexBody::Square { .. } | ConvexBody::Polygon(_) => {
                let verts = self.corner_list();
                let mut out = Vec::new();
                for i in 0..verts.len() {
                    let a = verts[i];
                    let b = verts[(i + 1) % verts.len()];
                    let pieces = ((a.distance(b) / spacing).ceil() as usize).max(1);
                    for k in 0..pieces {
                        out.push(a + (b - a) * (k as f64 / pieces as f64));
                    }
                }
                Ok(out)
            }
            _ => {
                let count = ((self.perimeter() / spacing).ceil() as usize).max(3);
                self.boundary_sample(count)
            }
        }
    }

    fn corner_list(&self) -> Vec<Point2> {
        match self {
            ConvexBody::Square { center, half_width } => {
                let h = *half_width;
                vec![
                    *center + Point2::new(h, -h),
                    *center + Point2::new(h, h),
                    *center + Point2::new(-h, h),
                    *center + Point2::new(-h, -h),
                ]
            }
            ConvexBody::Polygon(p) => p.vertices.clone(),
            _ => Vec::new(),
        }
    }
}

fn walk_closed(verts: &[Point2], count: usize) -> Vec<Point2> {
    let n = verts.len();
    let lengths: Vec<f64> = (0..n)
        .map(|i| verts[i].distance(verts[(i + 1) % n]))
        .collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(count);
    let mut edge = 0;
    let mut start = 0.0;
    for k in 0..count {
        let s = total * k as f64 / count as f64;
        while edge + 1 < n && s >= start + lengths[edge] {
            start += lengths[edge];
            edge += 1;
        }
        let t = ((s - start) / lengths[edge]).clamp(0.0, 1.0);
        out.push(verts[edge] + (verts[(edge + 1) % n] - verts[edge]) * t);
    }
    out
}

pub(crate) fn closest_on_segment(a: Point2, b: Point2, p: Point2) -> Point2 {
    let e = b - a;
    let t = ((p - a).dot(e) / e.norm_squared()).clamp(0.0, 1.0);
    a + e * t
}

impl Polygon {
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    fn signed_distance(&self, p: Point2) -> f64 {
        let n = self.vertices.len();
        let plane = (0..n)
            .map(|i| (p - self.vertices[i]).dot(self.normals[i]))
            .fold(f64::NEG_INFINITY, f64::max);
        if plane <= 0.0 {
            return plane;
        }
        (0..n)
            .map(|i| {
                p.distance(closest_on_segment(
                    self.vertices[i],
                    self.vertices[(i + 1) % n],
                    p,
                ))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn signed_distance_gradient(&self, p: Point2) -> Point2 {
        let n = self.vertices.len();
        let (best, plane) = (0..n)
            .map(|i| (i, (p - self.vertices[i]).dot(self.normals[i])))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );
        if plane <= 0.0 {
            return self.normals[best];
        }
        let (q, d) = (0..n)
            .map(|i| {
                let q = closest_on_segment(self.vertices[i], self.vertices[(i + 1) % n], p);
                (q, p.distance(q))
            })
            .fold(
                (p, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );
        if d > 0.0 {
            (p - q).normalized()
        } else {
            self.normals[best]
        }
    }
}

impl Ellipse {
    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn matrix(&self) -> Mat2 {
        self.matrix
    }

    pub fn semi_axes(&self) -> [f64; 2] {
        self.semi
    }

    fn to_local(&self, p: Point2) -> Point2 {
        let d = p - self.center;
        Point2::new(d.dot(self.major), d.dot(self.major.perp()))
    }

    fn to_world(&self, q: Point2) -> Point2 {
        self.center + self.major * q.x + self.major.perp() * q.y
    }

    /// Outward unit normal at a point on (or near) the ellipse.
    fn normal_at(&self, p: Point2) -> Point2 {
        let q = self.to_local(p);
        let g = Point2::new(
            q.x / (self.semi[0] * self.semi[0]),
            q.y / (self.semi[1] * self.semi[1]),
        );
        if g.norm() == 0.0 {
            return self.major.perp();
        }
        let g = g.normalized();
        self.major * g.x + self.major.perp() * g.y
    }

    /// Closest boundary point and signed distance.
    fn closest(&self, p: Point2) -> (Point2, f64) {
        let q = self.to_local(p);
        let (e0, e1) = (self.semi[0], self.semi[1]);
        let (x0, x1) = closest_on_ellipse_quadrant(e0, e1, q.x.abs(), q.y.abs());
        let local = Point2::new(x0.copysign(q.x), x1.copysign(q.y));
        let dist = local.distance(q);
        let inside = (q.x / e0).powi(2) + (q.y / e1).powi(2) < 1.0;
        (self.to_world(local), if inside { -dist } else { dist })
    }

    fn point_at(&self, t: f64) -> Point2 {
        self.center + self.matrix.apply(Point2::from_angle(t))
    }

    /// Cumulative arclength at `n + 1` equispaced parameter values.
    fn arclength_table(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            // Simpson on each parameter cell using the speed |M z'(t)|
            let t0 = 2.0 * PI * (k - 1) as f64 / n as f64;
            let t1 = 2.0 * PI * k as f64 / n as f64;
            let speed = |t: f64| self.matrix.apply(Point2::from_angle(t).perp()).norm();
            acc += (t1 - t0) / 6.0 * (speed(t0) + 4.0 * speed(0.5 * (t0 + t1)) + speed(t1));
            out.push(acc);
        }
        out
    }

    fn arclength_sample(&self, count: usize) -> Vec<Point2> {
        let cells = 64 * count.max(64);
        let table = self.arclength_table(cells);
        let total = table[cells];
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for k in 0..count {
            let s = total * k as f64 / count as f64;
            while j + 1 < cells && table[j + 1] <= s {
                j += 1;
            }
            let frac = ((s - table[j]) / (table[j + 1] - table[j])).clamp(0.0, 1.0);
            let t = 2.0 * PI * (j as f64 + frac) / cells as f64;
            out.push(self.point_at(t));
        }
        out
    }
}

/// Closest point on the ellipse `(x/e0)^2 + (y/e1)^2 = 1` to `(y0, y1)` in the
/// first quadrant, `e0 >= e1 > 0`. Robust bisection on the Lagrange multiplier.
fn closest_on_ellipse_quadrant(e0: f64, e1: f64, y0: f64, y1: f64) -> (f64, f64) {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1) * (e0 / e1);
                let sbar = ellipse_root(r0, z0, z1, g);
                (r0 * y0 / (sbar + r0), y1 / (sbar + 1.0))
            } else {
                (y0, y1)
            }
        } else {
            (0.0, e1)
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xde0 = numer / denom;
            (e0 * xde0, e1 * (1.0 - xde0 * xde0).max(0.0).sqrt())
        } else {
            (e0, 0.0)
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let val = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if val > 0.0 {
            s0 = s;
        } else if val < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skew_target() -> ConvexBody {
        ConvexBody::ellipse(Point2::ZERO, Mat2::new(1.5, 0.5, 0.5, 2.0)).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        let disk = ConvexBody::unit_disk();
        assert!((disk.signed_distance(Point2::ZERO) + 1.0).abs() < 1e-15);
        assert!((disk.signed_distance(Point2::new(2.0, 0.0)) - 1.0).abs() < 1e-15);
        let sq = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
        assert!((sq.signed_distance(Point2::ZERO) + 1.1).abs() < 1e-15);
    }

    #[test]
    fn support_function_examples() {
        let disk = ConvexBody::unit_disk();
        for k in 0..16 {
            let n = Point2::from_angle(k as f64 * 0.4);
            assert!((disk.support_function(n) - 1.0).abs() < 1e-15);
        }
        let sq = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
        assert!((sq.support_function(Point2::new(1.0, 0.0)) - 1.1).abs() < 1e-15);

        // brute force over 10^6 boundary samples of M_y * circle
        let m = Mat2::new(1.5, 0.5, 0.5, 2.0);
        let n = Point2::new(1.0, 0.0);
        let brute = (0..1_000_000)
            .map(|k| n.dot(m.apply(Point2::from_angle(2.0 * PI * k as f64 / 1e6))))
            .fold(f64::NEG_INFINITY, f64::max);
        let value = skew_target().support_function(n);
        assert!((value - brute).abs() < 1e-9);
        assert!((value - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn support_function_normalizes() {
        let t = skew_target();
        let n = Point2::new(0.3, -0.8);
        assert!((t.support_function(n * 5.0) - t.support_function(n)).abs() < 1e-14);
    }

    #[test]
    fn outward_normal_examples() {
        let disk = ConvexBody::unit_disk();
        let n = disk.outward_normal(Point2::new(1.0, 0.0)).unwrap();
        assert!(n.distance(Point2::new(1.0, 0.0)) < 1e-15);
        let sq = ConvexBody::square(Point2::ZERO, 1.1).unwrap();
        let n = sq.outward_normal(Point2::new(1.1, 0.0)).unwrap();
        assert!(n.distance(Point2::new(1.0, 0.0)) < 1e-15);
        let corner = sq.outward_normal(Point2::new(1.1, 1.1)).unwrap();
        let b = std::f64::consts::FRAC_1_SQRT_2;
        assert!(corner.distance(Point2::new(b, b)) < 1e-15);
        let ell = ConvexBody::ellipse(Point2::ZERO, Mat2::diag(2.0, 1.0)).unwrap();
        let n = ell.outward_normal(Point2::new(2.0, 0.0)).unwrap();
        assert!(n.distance(Point2::new(1.0, 0.0)) < 1e-12);
        // level set x^2/4 + y^2 = 1 at (sqrt2, 1/sqrt2): gradient (x/2, 2y)
        let p = Point2::new(2f64.sqrt(), 0.5f64.sqrt());
        let expect = Point2::new(p.x / 2.0, 2.0 * p.y).normalized();
        assert!(ell.outward_normal(p).unwrap().distance(expect) < 1e-12);
    }

    #[test]
    fn outward_normal_rejects_interior_points() {
        let disk = ConvexBody::unit_disk();
        assert!(matches!(
            disk.outward_normal(Point2::new(0.5, 0.0)),
            Err(Error::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn gradient_bound_examples() {
        assert!((ConvexBody::unit_disk().gradient_bound_r() - 1.1).abs() < 1e-15);
        // brute-force |M_y theta| maximization
        let m = Mat2::new(1.5, 0.5, 0.5, 2.0);
        let brute = (0..200_000)
            .map(|k| {
                m.apply(Point2::from_angle(2.0 * PI * k as f64 / 2e5))
                    .norm()
            })
            .fold(0.0, f64::max);
        let r = skew_target().gradient_bound_r();
        assert!((r - 1.1 * brute).abs() < 1e-8);
        assert!((r - 2.5399).abs() < 1e-4);
        let seg = ConvexBody::segment(Point2::new(0.0, -1.0), Point2::new(0.0, 1.0)).unwrap();
        assert!((seg.gradient_bound_r() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn membership_and_sampling() {
        let disk = ConvexBody::unit_disk();
        assert!(disk.contains(Point2::new(0.5, 0.0)));
        assert!(!disk.contains(Point2::new(1.5, 0.0)));
        let pts = disk.boundary_sample(4).unwrap();
        assert_eq!(pts.len(), 4);
        for p in pts {
            assert!((p.norm() - 1.0).abs() <= disk.tol_boundary());
        }
        assert!(matches!(
            disk.boundary_sample(2),
            Err(Error::TooFewSamples(2))
        ));
    }

    #[test]
    fn ellipse_samples_are_arclength_uniform() {
        let ell = ConvexBody::ellipse(Point2::ZERO, Mat2::diag(2.0, 1.0)).unwrap();
        let pts = ell.boundary_sample(400).unwrap();
        let gaps: Vec<f64> = (0..pts.len())
            .map(|i| pts[i].distance(pts[(i + 1) % pts.len()]))
            .collect();
        let max = gaps.iter().cloned().fold(0.0, f64::max);
        let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.001, "{min} {max}");
        for p in &pts {
            assert!(ell.signed_distance(*p).abs() <= ell.tol_boundary());
        }
        // Ramanujan's approximation for the perimeter
        let (a, b) = (2.0f64, 1.0f64);
        let hh = ((a - b) / (a + b)).powi(2);
        let ram = PI * (a + b) * (1.0 + 3.0 * hh / (10.0 + (4.0 - 3.0 * hh).sqrt()));
        assert!((ell.perimeter() - ram).abs() < 1e-6);
    }

    #[test]
    fn ellipse_signed_distance_matches_brute_force() {
        let ell = skew_target();
        let boundary: Vec<Point2> = (0..200_000)
            .map(|k| {
                Mat2::new(1.5, 0.5, 0.5, 2.0).apply(Point2::from_angle(2.0 * PI * k as f64 / 2e5))
            })
            .collect();
        for p in [
            Point2::new(0.1, 0.2),
            Point2::new(3.0, -1.0),
            Point2::new(-0.4, 1.9),
            Point2::new(0.0, 0.0),
            Point2::new(2.2, 2.2),
        ] {
            let brute = boundary
                .iter()
                .map(|q| q.distance(p))
                .fold(f64::INFINITY, f64::min);
            let sd = ell.signed_distance(p);
            assert!((sd.abs() - brute).abs() < 1e-6, "{p:?}: {sd} vs {brute}");
            assert_eq!(sd < 0.0, ell.contains(p));
        }
    }

    #[test]
    fn polygon_rejects_clockwise() {
        let cw = vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 0.0),
        ];
        assert!(ConvexBody::polygon(cw).is_err());
    }

    #[test]
    fn gallery_shapes_are_convex() {
        let bowl = ConvexBody::bowl(Point2::new(0.0, -0.6), 1.4, 0.6, 120).unwrap();
        assert!((bowl.support_function(Point2::new(0.0, 1.0)) - 0.6).abs() < 1e-12);
        assert!((bowl.support_function(Point2::new(0.0, -1.0)) - 2.0).abs() < 1e-3);
        let cone =
            ConvexBody::cone(Point2::new(0.0, -1.0), Point2::new(0.0, 0.3), PI / 3.0, 120).unwrap();
        assert!((cone.support_function(Point2::new(0.0, -1.0)) - 1.0).abs() < 1e-12);
        assert!((cone.support_function(Point2::new(0.0, 1.0)) - 0.95).abs() < 1e-3);
        assert!(ConvexBody::regular_polygon(Point2::ZERO, 1.0, 5, PI / 2.0).is_ok());
    }

    #[test]
    fn segment_has_zero_distance_on_itself() {
        let seg = ConvexBody::segment(Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)).unwrap();
        assert!(seg.signed_distance(Point2::new(0.3, 0.0)) < 1e-15);
        assert!((seg.signed_distance(Point2::new(0.3, 0.5)) - 0.5).abs() < 1e-15);
        assert!((seg.support_function(Point2::new(0.0, 1.0))).abs() < 1e-15);
        assert!((seg.support_function(Point2::new(-1.0, 0.0)) - 1.0).abs() < 1e-15);
    }
}
