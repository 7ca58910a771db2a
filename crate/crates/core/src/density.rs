//! Bilinear (Q1) image densities on the unit square, with exact quadrature of
//! cell moments and of line integrals along cell facets.
//!
//! A density is stored as values on the corners of a `width × height` pixel
//! grid and interpolated bilinearly inside each pixel, so it is continuous on
//! all of Ω = [0,1]². Every integral this module computes is exact up to
//! rounding: polygons are clipped to the pixel grid and each piece is
//! integrated with a symmetric degree-4 triangle rule (the integrands are
//! polynomials of total degree ≤ 4 on a pixel); segments are split at pixel
//! crossings and integrated with 3-point Gauss–Legendre (degree ≤ 5).

use crate::error::DensityError;
use crate::geom::{clip_halfplane, cross, ConvexPolygon, Point};
use nalgebra::Matrix2;

/// How a raster grid is turned into corner values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GridInterp {
    /// Input values are per-pixel means; each corner takes the average of its
    /// 1, 2 or 4 incident pixels. Works for any grid size ≥ 1×1.
    #[default]
    CellMean,
    /// Input values *are* the corner values of a `(w−1) × (h−1)` pixel grid.
    /// Needs at least a 2×2 input.
    Corner,
}

/// Bilinear density on Ω = [0,1]², normalized to unit total mass.
#[derive(Clone, Debug)]
pub struct BilinearDensity {
    width: usize,
    height: usize,
    /// `(width+1) × (height+1)` corner values, row-major with y increasing:
    /// `corners[iy * (width+1) + ix]` sits at `(ix/width, iy/height)`.
    corners: Vec<f64>,
    /// Scale factor that was applied to reach unit mass.
    normalization: f64,
}

/// Exact moments of a density restricted to a convex cell:
/// mass `∫ m`, first moment `∫ x m(x) dx`, and transport cost
/// `∫ ½‖z − x‖² m(x) dx` relative to the cell's site `z`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellMoments {
    pub mass: f64,
    pub first_moment: Point,
    pub cost: f64,
}

/// Raw line-integral moments over a segment chain (arclength measure):
/// `p0 = ∫ m dσ`, `p1 = ∫ x m dσ`, `p2 = ∫ x xᵀ m dσ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentMoments {
    pub p0: f64,
    pub p1: Point,
    pub p2: Matrix2<f64>,
}

impl Default for SegmentMoments {
    fn default() -> Self {
        SegmentMoments { p0: 0.0, p1: Point::zeros(), p2: Matrix2::zeros() }
    }
}

impl SegmentMoments {
    pub fn add(&mut self, other: &SegmentMoments) {
        self.p0 += other.p0;
        self.p1 += other.p1;
        self.p2 += other.p2;
    }
}

/// Facet integrals used by the transport Hessian, for a facet between sites
/// `zi` and `zj`: `s0 = ∫ m dσ`, `s1 = ∫ (zj − x) m dσ`,
/// `s2 = ∫ (zj − x)(zi − x)ᵀ m dσ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FacetIntegrals {
    pub s0: f64,
    pub s1: Point,
    pub s2: Matrix2<f64>,
}

/// Symmetric 6-point triangle rule, exact for total degree ≤ 4.
/// Barycentric coordinates with weights normalized to the triangle area.
const TRI_RULE: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

/// 3-point Gauss–Legendre on [−1, 1], exact for degree ≤ 5.
const GL3: [(f64, f64); 3] = [
    (-0.774596669241483377, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774596669241483377, 5.0 / 9.0),
];

impl BilinearDensity {
    /// Builds a density from a raster grid in image convention: `values` is
    /// row-major with `values[row * width + col]`, and **row 0 is the top of
    /// Ω** (y = 1). The grid is validated (finite, non-negative, not all
    /// zero) and normalized to unit mass.
    pub fn from_image_grid(
        width: usize,
        height: usize,
        values: &[f64],
        interp: GridInterp,
    ) -> Result<Self, DensityError> {
        if width == 0 || height == 0 || values.is_empty() {
            return Err(DensityError::EmptyGrid);
        }
        assert_eq!(values.len(), width * height, "grid dimensions do not match value count");
        for row in 0..height {
            for col in 0..width {
                let v = values[row * width + col];
                if !v.is_finite() || v < 0.0 {
                    return Err(DensityError::BadValue { col, row, value: v });
                }
            }
        }
        match interp {
            GridInterp::Corner => {
                if width < 2 || height < 2 {
                    return Err(DensityError::GridTooSmall { width, height });
                }
                // Input row r (top-down) becomes corner row iy = (height-1) - r.
                let (pw, ph) = (width - 1, height - 1);
                let mut corners = vec![0.0; width * height];
                for r in 0..height {
                    let iy = ph - r;
                    for c in 0..width {
                        corners[iy * width + c] = values[r * width + c];
                    }
                }
                Self::from_corner_values(pw, ph, corners)
            }
            GridInterp::CellMean => {
                // Corner (ix, iy) averages its incident pixels; pixel y-row
                // cy (y-up) is input row (height-1) - cy.
                let (cw, ch) = (width + 1, height + 1);
                let mut corners = vec![0.0; cw * ch];
                for iy in 0..ch {
                    for ix in 0..cw {
                        let mut sum = 0.0;
                        let mut count = 0.0;
                        for cy in [iy.wrapping_sub(1), iy] {
                            if cy >= height {
                                continue;
                            }
                            for cx in [ix.wrapping_sub(1), ix] {
                                if cx >= width {
                                    continue;
                                }
                                sum += values[(height - 1 - cy) * width + cx];
                                count += 1.0;
                            }
                        }
                        corners[iy * cw + ix] = sum / count;
                    }
                }
                Self::from_corner_values(width, height, corners)
            }
        }
    }

    /// Builds a density directly from corner values in math orientation
    /// (row-major, y *increasing*): `corners[iy * (width+1) + ix]` is the
    /// value at `(ix/width, iy/height)`. Normalizes to unit mass.
    pub fn from_corner_values(
        width: usize,
        height: usize,
        corners: Vec<f64>,
    ) -> Result<Self, DensityError> {
        if width == 0 || height == 0 {
            return Err(DensityError::EmptyGrid);
        }
        assert_eq!(
            corners.len(),
            (width + 1) * (height + 1),
            "corner grid dimensions do not match value count"
        );
        for (k, &v) in corners.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(DensityError::BadValue {
                    col: k % (width + 1),
                    row: k / (width + 1),
                    value: v,
                });
            }
        }
        let mut density = BilinearDensity { width, height, corners, normalization: 1.0 };
        let total = density.raw_mass();
        if total <= 0.0 {
            return Err(DensityError::AllZero);
        }
        let scale = 1.0 / total;
        for v in &mut density.corners {
            *v *= scale;
        }
        density.normalization = scale;
        Ok(density)
    }

    /// The uniform density (a single pixel with unit corners).
    pub fn uniform() -> Self {
        BilinearDensity { width: 1, height: 1, corners: vec![1.0; 4], normalization: 1.0 }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// The scale factor that was applied to normalize the input to unit mass.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Normalized corner value at grid node `(ix, iy)`, y increasing.
    pub fn corner(&self, ix: usize, iy: usize) -> f64 {
        self.corners[iy * (self.width + 1) + ix]
    }

    /// Total mass by the closed-form pixel sum (1 after normalization; used
    /// on the raw grid during construction).
    fn raw_mass(&self) -> f64 {
        let (hx, hy) = (1.0 / self.width as f64, 1.0 / self.height as f64);
        let mut total = 0.0;
        for iy in 0..self.height {
            for ix in 0..self.width {
                let s = self.corner(ix, iy)
                    + self.corner(ix + 1, iy)
                    + self.corner(ix, iy + 1)
                    + self.corner(ix + 1, iy + 1);
                total += 0.25 * s * hx * hy;
            }
        }
        total
    }

    /// Pointwise evaluation, clamped to Ω.
    pub fn eval(&self, p: Point) -> f64 {
        let x = p.x.clamp(0.0, 1.0);
        let y = p.y.clamp(0.0, 1.0);
        let ix = ((x * self.width as f64) as usize).min(self.width - 1);
        let iy = ((y * self.height as f64) as usize).min(self.height - 1);
        self.eval_in_pixel(ix, iy, Point::new(x, y))
    }

    /// Bilinear evaluation using pixel `(ix, iy)`'s corners. Callers that
    /// already know the pixel avoid the floor-on-a-grid-line ambiguity.
    #[inline]
    fn eval_in_pixel(&self, ix: usize, iy: usize, p: Point) -> f64 {
        let s = (p.x * self.width as f64 - ix as f64).clamp(0.0, 1.0);
        let t = (p.y * self.height as f64 - iy as f64).clamp(0.0, 1.0);
        let c00 = self.corner(ix, iy);
        let c10 = self.corner(ix + 1, iy);
        let c01 = self.corner(ix, iy + 1);
        let c11 = self.corner(ix + 1, iy + 1);
        (c00 * (1.0 - s) + c10 * s) * (1.0 - t) + (c01 * (1.0 - s) + c11 * s) * t
    }

    /// Exact moments of the density over a convex cell with site `site`.
    ///
    /// The polygon must be convex, counter-clockwise, and inside Ω (within
    /// 1e-9). Empty or zero-area polygons yield all-zero moments.
    pub fn polygon_moments(
        &self,
        poly: &ConvexPolygon,
        site: Point,
    ) -> Result<CellMoments, DensityError> {
        if poly.is_empty() {
            return Ok(CellMoments::default());
        }
        if !poly.is_convex_ccw(1e-12) {
            return Err(DensityError::NonConvexPolygon);
        }
        for v in &poly.vertices {
            if !((-1e-9..=1.0 + 1e-9).contains(&v.x) && (-1e-9..=1.0 + 1e-9).contains(&v.y)) {
                return Err(DensityError::OutsideDomain { x: v.x, y: v.y });
            }
        }
        if poly.area() <= 0.0 {
            return Ok(CellMoments::default());
        }

        let bb = poly.bbox().expect("non-empty polygon has a bbox");
        let (w, h) = (self.width as f64, self.height as f64);
        let ix0 = ((bb.min.x * w).floor() as isize).clamp(0, self.width as isize - 1) as usize;
        let ix1 = ((bb.max.x * w).floor() as isize).clamp(0, self.width as isize - 1) as usize;

        let mut moments = CellMoments::default();
        let cap = poly.vertices.len() + 8;
        let mut tmp: Vec<Point> = Vec::with_capacity(cap);
        let mut strip: Vec<Point> = Vec::with_capacity(cap);
        let mut piece: Vec<Point> = Vec::with_capacity(cap);

        for ix in ix0..=ix1 {
            let x_lo = ix as f64 / w;
            let x_hi = (ix + 1) as f64 / w;
            clip_halfplane(&poly.vertices, |p| x_lo - p.x, &mut tmp);
            clip_halfplane(&tmp, |p| p.x - x_hi, &mut strip);
            if strip.len() < 3 {
                continue;
            }
            let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in &strip {
                y_min = y_min.min(v.y);
                y_max = y_max.max(v.y);
            }
            let iy0 = ((y_min * h).floor() as isize).clamp(0, self.height as isize - 1) as usize;
            let iy1 = ((y_max * h).floor() as isize).clamp(0, self.height as isize - 1) as usize;
            for iy in iy0..=iy1 {
                let y_lo = iy as f64 / h;
                let y_hi = (iy + 1) as f64 / h;
                clip_halfplane(&strip, |p| y_lo - p.y, &mut tmp);
                clip_halfplane(&tmp, |p| p.y - y_hi, &mut piece);
                if piece.len() < 3 {
                    continue;
                }
                self.accumulate_piece(&piece, ix, iy, site, &mut moments);
            }
        }
        Ok(moments)
    }

    /// Degree-4 quadrature of the piece (a convex polygon inside one pixel),
    /// fan-triangulated from its first vertex.
    fn accumulate_piece(
        &self,
        piece: &[Point],
        ix: usize,
        iy: usize,
        site: Point,
        acc: &mut CellMoments,
    ) {
        let a = piece[0];
        for k in 1..piece.len() - 1 {
            let b = piece[k];
            let c = piece[k + 1];
            let area = 0.5 * cross(b - a, c - a);
            if area <= 0.0 {
                continue;
            }
            for &(bary, weight) in &TRI_RULE {
                let x = a * bary[0] + b * bary[1] + c * bary[2];
                let m = self.eval_in_pixel(ix, iy, x);
                let w = weight * area * m;
                acc.mass += w;
                acc.first_moment += x * w;
                acc.cost += 0.5 * (site - x).norm_squared() * w;
            }
        }
    }

    /// Exact raw moments of the density along a straight segment (arclength
    /// measure), splitting at every pixel-grid crossing.
    pub fn segment_moments(&self, a: Point, b: Point) -> SegmentMoments {
        let d = b - a;
        let len = d.norm();
        let mut out = SegmentMoments::default();
        if len < 1e-300 {
            return out;
        }

        // Parameter values where the segment crosses a grid line.
        let mut ts: Vec<f64> = vec![0.0, 1.0];
        let mut push_crossings = |a0: f64, d0: f64, res: f64| {
            if d0.abs() < 1e-15 {
                return;
            }
            let (u0, u1) = (a0 * res, (a0 + d0) * res);
            let (lo, hi) = (u0.min(u1), u0.max(u1));
            let k0 = lo.ceil() as i64;
            let k1 = hi.floor() as i64;
            for k in k0..=k1 {
                let t = (k as f64 / res - a0) / d0;
                if t > 1e-12 && t < 1.0 - 1e-12 {
                    ts.push(t);
                }
            }
        };
        push_crossings(a.x, d.x, self.width as f64);
        push_crossings(a.y, d.y, self.height as f64);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);

        for win in ts.windows(2) {
            let (t0, t1) = (win[0], win[1]);
            if t1 - t0 < 1e-15 {
                continue;
            }
            let mid = a + d * (0.5 * (t0 + t1));
            let ix = (((mid.x.clamp(0.0, 1.0)) * self.width as f64) as usize).min(self.width - 1);
            let iy = (((mid.y.clamp(0.0, 1.0)) * self.height as f64) as usize).min(self.height - 1);
            for &(node, weight) in &GL3 {
                let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * node;
                let x = a + d * t;
                let m = self.eval_in_pixel(ix, iy, x);
                let w = weight * 0.5 * (t1 - t0) * len * m;
                out.p0 += w;
                out.p1 += x * w;
                out.p2 += x * x.transpose() * w;
            }
        }
        out
    }

    /// Facet integrals for the Hessian of the transport dual: over a chain of
    /// segments (a facet may have been split), with the two incident sites.
    pub fn facet_integrals(&self, segments: &[[Point; 2]], zi: Point, zj: Point) -> FacetIntegrals {
        let mut raw = SegmentMoments::default();
        for seg in segments {
            raw.add(&self.segment_moments(seg[0], seg[1]));
        }
        FacetIntegrals {
            s0: raw.p0,
            s1: zj * raw.p0 - raw.p1,
            s2: zj * zi.transpose() * raw.p0
                - zj * raw.p1.transpose()
                - raw.p1 * zi.transpose()
                + raw.p2,
        }
    }
}
