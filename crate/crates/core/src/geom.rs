//! Small planar primitives shared across the crate: points, axis-aligned
//! rectangles, convex polygons, and half-plane clipping.

use nalgebra::Vector2;

/// 2D point / vector in domain coordinates.
pub type Point = Vector2<f64>;

/// z-component of the 2D cross product `a × b`.
#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Axis-aligned rectangle `[min.x, max.x] × [min.y, max.y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        assert!(min.x < max.x && min.y < max.y, "rectangle must have positive extent");
        Rect { min, max }
    }

    /// The unit square `[0,1]²`.
    pub fn unit() -> Self {
        Rect { min: Point::new(0.0, 0.0), max: Point::new(1.0, 1.0) }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Corners in counter-clockwise order starting at `min`.
    pub fn corners(&self) -> [Point; 4] {
        [
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ]
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.x <= self.max.x + tol
            && p.y >= self.min.y - tol
            && p.y <= self.max.y + tol
    }
}

/// Convex polygon stored as a counter-clockwise vertex chain.
///
/// Fewer than three vertices represents the empty polygon; this is a valid
/// state (a Laguerre cell whose site is dominated everywhere is empty).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        ConvexPolygon { vertices }
    }

    pub fn empty() -> Self {
        ConvexPolygon { vertices: Vec::new() }
    }

    pub fn from_rect(r: &Rect) -> Self {
        ConvexPolygon { vertices: r.corners().to_vec() }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Signed area (positive for counter-clockwise chains, zero when empty).
    pub fn area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let v = &self.vertices;
        let mut a = 0.0;
        for k in 0..v.len() {
            let b = v[(k + 1) % v.len()];
            a += cross(v[k], b);
        }
        0.5 * a
    }

    /// Area centroid, falling back to the vertex mean for slivers whose area
    /// underflows. `None` only for the empty polygon.
    pub fn centroid(&self) -> Option<Point> {
        if self.vertices.is_empty() {
            return None;
        }
        let v = &self.vertices;
        let mut a = 0.0;
        let mut c = Point::new(0.0, 0.0);
        for k in 0..v.len() {
            let p = v[k];
            let q = v[(k + 1) % v.len()];
            let w = cross(p, q);
            a += w;
            c += (p + q) * w;
        }
        if a.abs() > 1e-30 {
            Some(c / (3.0 * a))
        } else {
            let mut m = Point::new(0.0, 0.0);
            for p in v {
                m += p;
            }
            Some(m / v.len() as f64)
        }
    }

    pub fn bbox(&self) -> Option<Rect> {
        let first = *self.vertices.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        Some(Rect { min: lo, max: hi })
    }

    /// Point-in-polygon test for convex CCW chains: `p` must lie on the left
    /// of (or within `tol` of) every edge.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let v = &self.vertices;
        for k in 0..v.len() {
            let a = v[k];
            let b = v[(k + 1) % v.len()];
            if cross(b - a, p - a) < -tol {
                return false;
            }
        }
        true
    }

    /// Checks the chain is convex and counter-clockwise within an absolute
    /// cross-product tolerance (clipping output can carry ~1e-15 noise at
    /// near-collinear vertices).
    pub fn is_convex_ccw(&self, tol: f64) -> bool {
        if self.is_empty() {
            return true;
        }
        let v = &self.vertices;
        let m = v.len();
        for k in 0..m {
            let a = v[k];
            let b = v[(k + 1) % m];
            let c = v[(k + 2) % m];
            if cross(b - a, c - b) < -tol {
                return false;
            }
        }
        self.area() >= -tol
    }

    /// Largest distance from `p` to a vertex (0 when empty).
    pub fn max_distance_from(&self, p: Point) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - p).norm())
            .fold(0.0, f64::max)
    }
}

/// Clips `input` against the half-plane `{ x : h(x) <= 0 }` into `out`
/// (Sutherland–Hodgman step). Points with `h == 0` are kept, so boundary
/// points survive on both sides of a split.
pub fn clip_halfplane(input: &[Point], h: impl Fn(Point) -> f64, out: &mut Vec<Point>) {
    out.clear();
    let m = input.len();
    if m == 0 {
        return;
    }
    let mut ha = h(input[m - 1]);
    let mut a = input[m - 1];
    for &b in input {
        let hb = h(b);
        if ha <= 0.0 {
            out.push(a);
            if hb > 0.0 {
                let t = ha / (ha - hb);
                out.push(a + (b - a) * t);
            }
        } else if hb <= 0.0 {
            let t = ha / (ha - hb);
            out.push(a + (b - a) * t);
        }
        a = b;
        ha = hb;
    }
}
