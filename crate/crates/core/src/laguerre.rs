//! Weighted Dirac clouds and their Laguerre (power) diagrams, clipped to an
//! axis-aligned domain rectangle.
//!
//! The Laguerre cell of site `i` is
//! `ℒᵢ = { x ∈ Ω : ½‖zᵢ−x‖² − φᵢ ≤ ½‖zⱼ−x‖² − φⱼ ∀j }`,
//! a convex polygon (possibly empty — a dominated site owns nothing, which is
//! a valid state, not an error). All potentials equal recovers the Voronoi
//! diagram.
//!
//! Cells are built independently: starting from the domain rectangle, each
//! cell is cut by bisector half-planes of the other sites in order of
//! increasing distance, visited through a uniform bucket grid. A security
//! radius derived from the current polygon (and the largest potential gap)
//! bounds which sites can still cut, so well-spread clouds cost O(k) clips
//! per cell instead of O(n). Every polygon edge keeps a label saying which
//! bisector or domain wall produced it; facets are read off the labels.

use crate::error::GeometryError;
use crate::geom::{ConvexPolygon, Point, Rect};
use rayon::prelude::*;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Two positions closer than this are considered coincident and rejected.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Weighted point cloud: positions `zᵢ`, target masses `mᵢ` (a probability
/// vector), and dual potentials `φᵢ`.
#[derive(Clone, Debug)]
pub struct DiracCloud {
    positions: Vec<Point>,
    masses: Vec<f64>,
    potentials: Vec<f64>,
}

impl DiracCloud {
    /// A cloud with zero potentials. Masses must be non-negative and sum to
    /// one within 1e-12.
    pub fn new(positions: Vec<Point>, masses: Vec<f64>) -> Result<Self, GeometryError> {
        let potentials = vec![0.0; positions.len()];
        Self::with_potentials(positions, masses, potentials)
    }

    pub fn with_potentials(
        positions: Vec<Point>,
        masses: Vec<f64>,
        potentials: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if positions.len() != masses.len() || positions.len() != potentials.len() {
            return Err(GeometryError::LengthMismatch {
                positions: positions.len(),
                masses: masses.len(),
                potentials: potentials.len(),
            });
        }
        for (index, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(GeometryError::NonFinitePosition { index });
            }
        }
        check_masses(&masses)?;
        for (index, v) in potentials.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeometryError::NonFinitePosition { index });
            }
        }
        Ok(DiracCloud { positions, masses, potentials })
    }

    /// Equal masses `1/n`, renormalized so the sum is exactly one up to
    /// rounding.
    pub fn uniform_masses(positions: Vec<Point>) -> Result<Self, GeometryError> {
        let n = positions.len();
        if n == 0 {
            return Err(GeometryError::EmptyCloud);
        }
        let raw = 1.0 / n as f64;
        let sum = raw * n as f64;
        Self::new(positions, vec![raw / sum; n])
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn potentials(&self) -> &[f64] {
        &self.potentials
    }

    pub fn set_positions(&mut self, positions: Vec<Point>) -> Result<(), GeometryError> {
        assert_eq!(positions.len(), self.n(), "cannot change the cloud size through set_positions");
        for (index, p) in positions.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(GeometryError::NonFinitePosition { index });
            }
        }
        self.positions = positions;
        Ok(())
    }

    pub fn set_potentials(&mut self, potentials: Vec<f64>) -> Result<(), GeometryError> {
        assert_eq!(potentials.len(), self.n(), "cannot change the cloud size through set_potentials");
        for (index, v) in potentials.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeometryError::NonFinitePosition { index });
            }
        }
        self.potentials = potentials;
        Ok(())
    }

    pub fn set_masses(&mut self, masses: Vec<f64>) -> Result<(), GeometryError> {
        assert_eq!(masses.len(), self.n(), "cannot change the cloud size through set_masses");
        check_masses(&masses)?;
        self.masses = masses;
        Ok(())
    }

    /// Shifts all potentials so they average to zero. The diagram is
    /// invariant under this shift; solvers use it to pin the dual's constant
    /// kernel direction.
    pub fn center_potentials(&mut self) {
        let mean = self.potentials.iter().sum::<f64>() / self.n() as f64;
        for v in &mut self.potentials {
            *v -= mean;
        }
    }

    /// Power distance `½‖x − zᵢ‖² − φᵢ` from `x` to site `index`.
    ///
    /// Panics if `index` is out of range.
    pub fn power_distance(&self, index: usize, x: Point) -> f64 {
        0.5 * (x - self.positions[index]).norm_squared() - self.potentials[index]
    }

    /// Finds one pair of sites closer than `tol`, if any.
    pub fn coincident_pair(&self, tol: f64) -> Option<(usize, usize, f64)> {
        let grid = SiteGrid::build(&self.positions, &Rect::unit());
        for i in 0..self.n() {
            let (bx, by) = grid.bucket_of(self.positions[i]);
            let mut hit = None;
            grid.for_neighborhood(bx, by, |j| {
                let j = j as usize;
                if j > i && hit.is_none() {
                    let d = (self.positions[j] - self.positions[i]).norm();
                    if d < tol {
                        hit = Some((i, j, d));
                    }
                }
            });
            if hit.is_some() {
                return hit;
            }
        }
        None
    }

    /// Perturbs the second member of every coincident pair by `amplitude`
    /// uniform noise until no pair is closer than [`COINCIDENCE_TOL`].
    /// `uniform` must return samples in `[0, 1)`. Returns the number of
    /// perturbed sites.
    pub fn jitter_coincident(
        &mut self,
        amplitude: f64,
        mut uniform: impl FnMut() -> f64,
    ) -> usize {
        let mut moved = 0;
        for _ in 0..100 {
            let Some((_, j, _)) = self.coincident_pair(COINCIDENCE_TOL) else {
                return moved;
            };
            let dx = amplitude * (2.0 * uniform() - 1.0);
            let dy = amplitude * (2.0 * uniform() - 1.0);
            self.positions[j] += Point::new(dx, dy);
            moved += 1;
        }
        moved
    }
}

fn check_masses(masses: &[f64]) -> Result<(), GeometryError> {
    let mut sum = 0.0;
    for &m in masses {
        if !m.is_finite() || m < 0.0 {
            return Err(GeometryError::BadMasses { sum: f64::NAN });
        }
        sum += m;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(GeometryError::BadMasses { sum });
    }
    Ok(())
}

/// What produced a cell polygon edge: the bisector with another site, or one
/// of the four domain walls (0 bottom, 1 right, 2 top, 3 left, matching the
/// counter-clockwise corner order of [`Rect::corners`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeSource {
    Bisector(u32),
    Wall(u8),
}

/// The other side of a facet: a neighboring site or the domain boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetSide {
    Site(usize),
    Boundary,
}

/// A maximal piece of shared boundary. Site–site facets appear once with
/// `i < j`; their segments are oriented counter-clockwise around cell `i`.
/// Each cell that touches the domain boundary also gets one facet with
/// `j = Boundary` collecting its wall segments.
#[derive(Clone, Debug)]
pub struct Facet {
    pub i: usize,
    pub j: FacetSide,
    pub segments: Vec<[Point; 2]>,
}

/// A Laguerre diagram clipped to `domain`. `cells[i]` may be empty.
/// `cell_edges[i][k]` labels the polygon edge from vertex `k` to `k+1`.
#[derive(Clone, Debug)]
pub struct LaguerreDiagram {
    pub domain: Rect,
    pub cells: Vec<ConvexPolygon>,
    pub cell_edges: Vec<Vec<EdgeSource>>,
    pub facets: Vec<Facet>,
}

impl LaguerreDiagram {
    pub fn n(&self) -> usize {
        self.cells.len()
    }

    /// Facets between two sites (skipping domain-boundary facets).
    pub fn site_facets(&self) -> impl Iterator<Item = (usize, usize, &Facet)> {
        self.facets.iter().filter_map(|f| match f.j {
            FacetSide::Site(j) => Some((f.i, j, f)),
            FacetSide::Boundary => None,
        })
    }

    pub fn total_cell_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area()).sum()
    }
}

/// Builds the Laguerre diagram of `cloud` clipped to `domain`.
///
/// Fails with [`GeometryError::CoincidentSites`] when two positions are
/// closer than [`COINCIDENCE_TOL`]; resolve by separating the sites or via
/// [`DiracCloud::jitter_coincident`].
pub fn build_diagram(cloud: &DiracCloud, domain: Rect) -> Result<LaguerreDiagram, GeometryError> {
    build_with_potentials(cloud.positions(), cloud.potentials(), domain)
}

/// Voronoi convenience wrapper: the φ = 0 diagram, whatever potentials the
/// cloud carries.
pub fn voronoi_diagram(cloud: &DiracCloud, domain: Rect) -> Result<LaguerreDiagram, GeometryError> {
    let zeros = vec![0.0; cloud.n()];
    build_with_potentials(cloud.positions(), &zeros, domain)
}

fn build_with_potentials(
    positions: &[Point],
    potentials: &[f64],
    domain: Rect,
) -> Result<LaguerreDiagram, GeometryError> {
    let n = positions.len();
    assert!(n > 0, "cannot build a diagram without sites");
    let grid = SiteGrid::build(positions, &domain);
    let phi_max = potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let build = |i: usize| build_cell(i, positions, potentials, &domain, &grid, phi_max);
    // Cells are independent; the per-cell computation is identical either
    // way, so results do not depend on the thread count.
    let results: Vec<Result<CellChain, GeometryError>> = if n < 64 {
        (0..n).map(build).collect()
    } else {
        (0..n).into_par_iter().map(build).collect()
    };

    let mut cells = Vec::with_capacity(n);
    let mut cell_edges = Vec::with_capacity(n);
    for r in results {
        let chain = r?;
        cells.push(ConvexPolygon::new(chain.verts));
        cell_edges.push(chain.labels);
    }

    let facets = extract_facets(&cells, &cell_edges);
    Ok(LaguerreDiagram { domain, cells, cell_edges, facets })
}

struct CellChain {
    verts: Vec<Point>,
    labels: Vec<EdgeSource>,
}

impl CellChain {
    fn empty() -> Self {
        CellChain { verts: Vec::new(), labels: Vec::new() }
    }
}

/// Sites beyond `r_poly + sqrt(r_poly² + 2·(φ_max − φᵢ))` cannot cut the
/// current polygon: for such `j`, every polygon point is power-closer to `i`
/// than to `j`. The radius shrinks monotonically as clips remove vertices.
fn security_radius(r_poly: f64, phi_gap: f64) -> f64 {
    r_poly + (r_poly * r_poly + 2.0 * phi_gap).max(0.0).sqrt()
}

fn build_cell(
    i: usize,
    positions: &[Point],
    potentials: &[f64],
    domain: &Rect,
    grid: &SiteGrid,
    phi_max: f64,
) -> Result<CellChain, GeometryError> {
    let zi = positions[i];
    let mut verts: Vec<Point> = domain.corners().to_vec();
    let mut labels: Vec<EdgeSource> =
        vec![EdgeSource::Wall(0), EdgeSource::Wall(1), EdgeSource::Wall(2), EdgeSource::Wall(3)];
    let mut scratch_v: Vec<Point> = Vec::with_capacity(12);
    let mut scratch_l: Vec<EdgeSource> = Vec::with_capacity(12);

    let phi_gap = (phi_max - potentials[i]).max(0.0);
    let mut r_poly = verts.iter().map(|v| (v - zi).norm()).fold(0.0, f64::max);
    let mut security = security_radius(r_poly, phi_gap);

    let (bx, by) = grid.bucket_of(zi);
    let ring_exhausted = grid.max_ring(bx, by);
    // Min-heap of candidate sites keyed by squared distance. Non-negative
    // floats order like their bit patterns, so u64 keys avoid a float
    // wrapper.
    let mut heap: BinaryHeap<Reverse<(u64, u32)>> = BinaryHeap::new();

    let mut ring = 0usize;
    'rings: loop {
        let committed = if ring > ring_exhausted {
            f64::INFINITY
        } else {
            grid.for_ring(bx, by, ring, |j| {
                if j as usize != i {
                    let d2 = (positions[j as usize] - zi).norm_squared();
                    heap.push(Reverse((d2.to_bits(), j)));
                }
            });
            // Any site not collected after this ring is at least this far.
            ring as f64 * grid.h_min()
        };

        while let Some(&Reverse((bits, j))) = heap.peek() {
            let d = f64::from_bits(bits).sqrt();
            if d >= committed {
                break;
            }
            heap.pop();
            if d < COINCIDENCE_TOL {
                let (a, b) = (i.min(j as usize), i.max(j as usize));
                return Err(GeometryError::CoincidentSites { i: a, j: b, dist: d });
            }
            if d >= security {
                break 'rings;
            }
            let j = j as usize;
            let zj = positions[j];
            // Bisector in midpoint form: ψᵢ(x) − ψⱼ(x) = (x − mid)·(zⱼ − zᵢ)
            // + (φⱼ − φᵢ); the cell keeps the ≤ 0 side. Using potential
            // *differences* makes the diagram exactly invariant under a
            // constant potential shift.
            let dir = zj - zi;
            let mid = (zi + zj) * 0.5;
            let offset = potentials[j] - potentials[i];
            clip_labeled(
                &mut verts,
                &mut labels,
                &mut scratch_v,
                &mut scratch_l,
                |p| (p - mid).dot(&dir) + offset,
                EdgeSource::Bisector(j as u32),
            );
            if verts.len() < 3 {
                return Ok(CellChain::empty());
            }
            r_poly = verts.iter().map(|v| (v - zi).norm()).fold(0.0, f64::max);
            security = security_radius(r_poly, phi_gap);
        }

        if security <= committed {
            break;
        }
        if ring > ring_exhausted && heap.is_empty() {
            break;
        }
        ring += 1;
    }

    dedupe_chain(&mut verts, &mut labels, 1e-14);
    if verts.len() < 3 {
        return Ok(CellChain::empty());
    }
    Ok(CellChain { verts, labels })
}

/// Sutherland–Hodgman step that tracks edge labels. Edges created along the
/// cut line get `cut`; truncated edges keep their label. Vertices exactly on
/// the line count as inside, so a shared boundary survives in both cells.
fn clip_labeled(
    verts: &mut Vec<Point>,
    labels: &mut Vec<EdgeSource>,
    out_v: &mut Vec<Point>,
    out_l: &mut Vec<EdgeSource>,
    h: impl Fn(Point) -> f64,
    cut: EdgeSource,
) {
    out_v.clear();
    out_l.clear();
    let m = verts.len();
    for k in 0..m {
        let a = verts[k];
        let b = verts[(k + 1) % m];
        let la = labels[k];
        let ha = h(a);
        let hb = h(b);
        if ha <= 0.0 {
            out_v.push(a);
            out_l.push(la);
            if hb > 0.0 {
                let t = ha / (ha - hb);
                out_v.push(a + (b - a) * t);
                out_l.push(cut);
            }
        } else if hb <= 0.0 {
            let t = ha / (ha - hb);
            out_v.push(a + (b - a) * t);
            out_l.push(la);
        }
    }
    std::mem::swap(verts, out_v);
    std::mem::swap(labels, out_l);
}

/// Removes zero-length edges (vertex pairs closer than `eps`), merging their
/// labels away. Clipping produces such pairs when a cut passes through an
/// existing vertex.
fn dedupe_chain(verts: &mut Vec<Point>, labels: &mut Vec<EdgeSource>, eps: f64) {
    let mut k = 0;
    while verts.len() >= 2 && k < verts.len() {
        let next = (k + 1) % verts.len();
        if (verts[next] - verts[k]).norm() <= eps {
            verts.remove(next);
            labels.remove(k);
            if next < k {
                k = 0; // removed the head; indices shifted, restart
            }
        } else {
            k += 1;
        }
    }
}

fn extract_facets(cells: &[ConvexPolygon], cell_edges: &[Vec<EdgeSource>]) -> Vec<Facet> {
    // (i, j, segment) for every bisector edge seen from the lower index.
    let mut pairs: Vec<(usize, usize, [Point; 2])> = Vec::new();
    let mut walls: Vec<Vec<[Point; 2]>> = vec![Vec::new(); cells.len()];
    for (i, (cell, labels)) in cells.iter().zip(cell_edges).enumerate() {
        let v = &cell.vertices;
        for k in 0..v.len() {
            let seg = [v[k], v[(k + 1) % v.len()]];
            match labels[k] {
                EdgeSource::Wall(_) => walls[i].push(seg),
                EdgeSource::Bisector(j) => {
                    let j = j as usize;
                    if i < j {
                        pairs.push((i, j, seg));
                    }
                }
            }
        }
    }
    pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut facets: Vec<Facet> = Vec::new();
    for (i, j, seg) in pairs {
        match facets.last_mut() {
            Some(f) if f.i == i && f.j == FacetSide::Site(j) => f.segments.push(seg),
            _ => facets.push(Facet { i, j: FacetSide::Site(j), segments: vec![seg] }),
        }
    }
    for (i, segs) in walls.into_iter().enumerate() {
        if !segs.is_empty() {
            facets.push(Facet { i, j: FacetSide::Boundary, segments: segs });
        }
    }
    facets
}

/// Uniform bucket grid over the domain for distance-ordered site traversal.
/// Positions outside the domain are clamped into the border buckets, which
/// only makes the traversal conservative.
struct SiteGrid {
    g: usize,
    hx: f64,
    hy: f64,
    origin: Point,
    buckets: Vec<Vec<u32>>,
}

impl SiteGrid {
    fn build(positions: &[Point], domain: &Rect) -> SiteGrid {
        let n = positions.len();
        let g = ((n as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let mut grid = SiteGrid {
            g,
            hx: domain.width() / g as f64,
            hy: domain.height() / g as f64,
            origin: domain.min,
            buckets: vec![Vec::new(); g * g],
        };
        for (j, p) in positions.iter().enumerate() {
            let (bx, by) = grid.bucket_of(*p);
            grid.buckets[by * g + bx].push(j as u32);
        }
        grid
    }

    fn bucket_of(&self, p: Point) -> (usize, usize) {
        let gx = (((p.x - self.origin.x) / self.hx).floor() as isize).clamp(0, self.g as isize - 1);
        let gy = (((p.y - self.origin.y) / self.hy).floor() as isize).clamp(0, self.g as isize - 1);
        (gx as usize, gy as usize)
    }

    fn h_min(&self) -> f64 {
        self.hx.min(self.hy)
    }

    fn max_ring(&self, bx: usize, by: usize) -> usize {
        let g = self.g - 1;
        bx.max(g - bx).max(by).max(g - by)
    }

    /// Visits all sites in buckets at Chebyshev distance exactly `r`.
    fn for_ring(&self, bx: usize, by: usize, r: usize, mut f: impl FnMut(u32)) {
        let g = self.g as isize;
        let (cx, cy) = (bx as isize, by as isize);
        let r = r as isize;
        let visit = |x: isize, y: isize, f: &mut dyn FnMut(u32)| {
            if (0..g).contains(&x) && (0..g).contains(&y) {
                for &j in &self.buckets[(y * g + x) as usize] {
                    f(j);
                }
            }
        };
        if r == 0 {
            visit(cx, cy, &mut f);
            return;
        }
        for x in (cx - r)..=(cx + r) {
            visit(x, cy - r, &mut f);
            visit(x, cy + r, &mut f);
        }
        for y in (cy - r + 1)..=(cy + r - 1) {
            visit(cx - r, y, &mut f);
            visit(cx + r, y, &mut f);
        }
    }

    /// Visits the 3×3 bucket neighborhood (for coincidence checks).
    fn for_neighborhood(&self, bx: usize, by: usize, mut f: impl FnMut(u32)) {
        for r in 0..=1 {
            self.for_ring(bx, by, r, &mut f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn unit_cloud(positions: Vec<Point>) -> DiracCloud {
        DiracCloud::uniform_masses(positions).unwrap()
    }

    #[test]
    fn single_site_owns_the_domain() {
        let cloud = unit_cloud(vec![Point::new(0.3, 0.7)]);
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_eq!(diag.cells.len(), 1);
        assert_relative_eq!(diag.cells[0].area(), 1.0, epsilon = 1e-15);
        assert!(diag.site_facets().next().is_none());
        assert_eq!(diag.facets.len(), 1, "one boundary facet expected");
    }

    #[test]
    fn two_equal_sites_split_at_midline() {
        let cloud = unit_cloud(vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)]);
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_relative_eq!(diag.cells[0].area(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(diag.cells[1].area(), 0.5, epsilon = 1e-12);
        let (i, j, facet) = diag.site_facets().next().expect("one interior facet");
        assert_eq!((i, j), (0, 1));
        for seg in &facet.segments {
            for p in seg {
                assert_abs_diff_eq!(p.x, 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn potential_moves_the_bisector() {
        // ψ¹ = ψ² at x·(z²−z¹) = ½(‖z²‖²−‖z¹‖²) + φ¹ − φ²: here x = 0.6.
        let cloud = DiracCloud::with_potentials(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
            vec![0.05, 0.0],
        )
        .unwrap();
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_relative_eq!(diag.cells[0].area(), 0.6, epsilon = 1e-12);
        let (_, _, facet) = diag.site_facets().next().unwrap();
        for p in &facet.segments[0] {
            assert_abs_diff_eq!(p.x, 0.6, epsilon = 1e-12);
        }
    }

    #[test]
    fn four_quadrant_sites() {
        let cloud = unit_cloud(vec![
            Point::new(0.25, 0.25),
            Point::new(0.75, 0.25),
            Point::new(0.25, 0.75),
            Point::new(0.75, 0.75),
        ]);
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        for cell in &diag.cells {
            assert_relative_eq!(cell.area(), 0.25, epsilon = 1e-12);
        }
        // Diagonal neighbors meet only at the center point; after removing
        // zero-length edges, four axis-aligned facets remain.
        assert_eq!(diag.site_facets().count(), 4);
    }

    #[test]
    fn three_collinear_sites_make_slabs() {
        let cloud = unit_cloud(vec![
            Point::new(0.2, 0.5),
            Point::new(0.5, 0.5),
            Point::new(0.8, 0.5),
        ]);
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_relative_eq!(diag.cells[0].area(), 0.35, epsilon = 1e-12);
        assert_relative_eq!(diag.cells[1].area(), 0.30, epsilon = 1e-12);
        assert_relative_eq!(diag.cells[2].area(), 0.35, epsilon = 1e-12);
        assert_eq!(diag.site_facets().count(), 2, "outer sites are not adjacent");
    }

    #[test]
    fn dominated_site_gets_an_empty_cell() {
        let cloud = DiracCloud::with_potentials(
            vec![Point::new(0.4, 0.5), Point::new(0.6, 0.5)],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
        )
        .unwrap();
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert!(diag.cells[1].is_empty(), "dominated cell must be empty, not an error");
        assert_relative_eq!(diag.cells[0].area(), 1.0, epsilon = 1e-12);
        assert!(diag.site_facets().next().is_none());
    }

    #[test]
    fn coincident_sites_are_rejected() {
        let cloud = unit_cloud(vec![Point::new(0.5, 0.5), Point::new(0.5, 0.5)]);
        let err = build_diagram(&cloud, Rect::unit());
        assert!(matches!(err, Err(GeometryError::CoincidentSites { i: 0, j: 1, .. })));
    }

    #[test]
    fn jitter_resolves_coincidence() {
        let mut cloud = unit_cloud(vec![
            Point::new(0.5, 0.5),
            Point::new(0.5, 0.5),
            Point::new(0.25, 0.25),
        ]);
        // A deterministic "uniform" stream is enough here.
        let mut state = 0.1_f64;
        let moved = cloud.jitter_coincident(1e-9, || {
            state = (state * 16807.0).fract();
            state
        });
        assert_eq!(moved, 1);
        assert!(cloud.coincident_pair(COINCIDENCE_TOL).is_none());
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_eq!(diag.cells.len(), 3);
        assert!(diag.cells.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn constant_potential_shift_leaves_the_diagram_bit_identical() {
        let positions = vec![
            Point::new(0.11, 0.42),
            Point::new(0.65, 0.17),
            Point::new(0.48, 0.81),
            Point::new(0.9, 0.66),
        ];
        // Dyadic potentials and shift keep every φ + c exact, so the clip
        // offsets φⱼ − φᵢ — the only way potentials enter — are unchanged
        // down to the last bit.
        let phis = vec![0.015625, -0.03125, 0.0078125, 0.0];
        let shifted: Vec<f64> = phis.iter().map(|p| p + 3.75).collect();
        let a = build_diagram(
            &DiracCloud::with_potentials(positions.clone(), vec![0.25; 4], phis).unwrap(),
            Rect::unit(),
        )
        .unwrap();
        let b = build_diagram(
            &DiracCloud::with_potentials(positions, vec![0.25; 4], shifted).unwrap(),
            Rect::unit(),
        )
        .unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(ca.vertices, cb.vertices, "shift must not change any vertex bit");
        }
    }

    #[test]
    fn membership_matches_power_distance() {
        let cloud = DiracCloud::with_potentials(
            vec![
                Point::new(0.2, 0.3),
                Point::new(0.7, 0.2),
                Point::new(0.5, 0.8),
                Point::new(0.85, 0.75),
            ],
            vec![0.25; 4],
            vec![0.02, -0.01, 0.0, 0.03],
        )
        .unwrap();
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        // Deterministic sample points.
        for a in 0..20 {
            for b in 0..20 {
                let p = Point::new((a as f64 + 0.5) / 20.0, (b as f64 + 0.5) / 20.0);
                let owner = (0..cloud.n())
                    .filter(|&i| diag.cells[i].contains(p, 1e-12))
                    .min_by(|&i, &j| {
                        cloud.power_distance(i, p).total_cmp(&cloud.power_distance(j, p))
                    });
                let best = (0..cloud.n())
                    .map(|i| cloud.power_distance(i, p))
                    .fold(f64::INFINITY, f64::min);
                let owner = owner.expect("every point lies in some cell");
                assert!(
                    cloud.power_distance(owner, p) <= best + 1e-9,
                    "cell membership disagrees with the power distance at {p:?}"
                );
            }
        }
    }

    #[test]
    fn facets_are_unique_and_consistent() {
        let cloud = unit_cloud(vec![
            Point::new(0.15, 0.2),
            Point::new(0.8, 0.3),
            Point::new(0.4, 0.7),
            Point::new(0.6, 0.45),
            Point::new(0.25, 0.85),
        ]);
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (i, j, facet) in diag.site_facets() {
            assert!(i < j, "facets must be stored from the lower index");
            assert!(seen.insert((i, j)), "facet ({i},{j}) appears twice");
            for seg in &facet.segments {
                for p in seg {
                    // Both endpoints lie on the bisector and in both cells.
                    let di = cloud.power_distance(i, *p);
                    let dj = cloud.power_distance(j, *p);
                    assert_abs_diff_eq!(di, dj, epsilon = 1e-9);
                    assert!(diag.cells[j].contains(*p, 1e-9));
                    assert!(diag.cells[i].contains(*p, 1e-9));
                }
            }
        }
    }

    #[test]
    fn partition_covers_the_domain() {
        // 60 deterministic pseudo-random sites with potentials.
        let mut state = 0.37_f64;
        let mut next = move || {
            state = (state * 997.0 + 0.123).fract();
            state
        };
        let positions: Vec<Point> = (0..60).map(|_| Point::new(next(), next())).collect();
        let potentials: Vec<f64> = (0..60).map(|_| 0.01 * (next() - 0.5)).collect();
        let cloud =
            DiracCloud::with_potentials(positions, vec![1.0 / 60.0; 60], potentials).unwrap();
        let diag = build_diagram(&cloud, Rect::unit()).unwrap();
        assert_abs_diff_eq!(diag.total_cell_area(), 1.0, epsilon = 1e-10);
    }
}
