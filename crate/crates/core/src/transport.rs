//! The semi-discrete dual objective and its exact derivatives.
//!
//! For a cloud `(z, m, φ)` against a bilinear density ν, the engine evaluates
//!
//! `g(φ, z, m) = Σᵢ ∫_{ℒᵢ} (½‖zᵢ−x‖² − φᵢ) dν + Σᵢ φᵢ mᵢ`
//!
//! together with its first derivatives (`∂g/∂φᵢ = mᵢ − ν(ℒᵢ)`,
//! `∂g/∂zᵢ = Mᵢ(zᵢ − z̄ᵢ)`) and the full second-derivative blocks, which live
//! on the facets of the Laguerre diagram:
//!
//! - `∂²g/∂φᵢ∂φⱼ = +∫_{Γᵢⱼ} m/d dσ` for `i ≠ j`, diagonal `−Σⱼ` (so the φφ
//!   block of the concave `g` is negative semidefinite with the constant
//!   vector in its kernel),
//! - `∂²g/∂φᵢ∂zⱼ = −∫_{Γᵢⱼ} (zⱼ−x) m/d dσ`, diagonal with the opposite sign
//!   and `zᵢ`,
//! - `∂²g/∂zᵢ∂zⱼ = +∫_{Γᵢⱼ} (zᵢ−x)(zⱼ−x)ᵀ m/d dσ`, diagonal
//!   `Mᵢ·I − Σⱼ ∫ (zᵢ−x)(zᵢ−x)ᵀ m/d dσ`,
//!
//! with `d = ‖zᵢ − zⱼ‖` and σ the length measure on the facet. Only
//! site–site facets move when φ or z move, so domain-wall facets contribute
//! nothing. The reduced (Blue Noise) Hessian eliminates φ through the Schur
//! complement on the mean-zero subspace.

use crate::density::{BilinearDensity, CellMoments, SegmentMoments};
use crate::error::TransportError;
use crate::geom::{Point, Rect};
use crate::laguerre::{voronoi_diagram, DiracCloud, FacetSide, LaguerreDiagram};
use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;

/// Value and first derivatives of `g`, plus the per-cell quantities the
/// solvers reuse (masses, barycenters, per-cell transport costs).
#[derive(Clone, Debug)]
pub struct FirstOrder {
    /// g(φ, z, m).
    pub value: f64,
    /// ∂g/∂φᵢ = mᵢ − Mᵢ. Sums to zero up to quadrature rounding.
    pub grad_phi: Vec<f64>,
    /// ∂g/∂zᵢ = Mᵢ zᵢ − ∫_{ℒᵢ} x dν = Mᵢ (zᵢ − z̄ᵢ).
    pub grad_z: Vec<Point>,
    /// Mᵢ = ν(ℒᵢ).
    pub cell_masses: Vec<f64>,
    /// ν-barycenter z̄ᵢ of cell i. Falls back to the polygon centroid when
    /// the cell carries no mass, and to zᵢ when the polygon is empty, so a
    /// Lloyd step `z ← z̄` is always defined.
    pub barycenters: Vec<Point>,
    /// ∫_{ℒᵢ} ½‖zᵢ−x‖² dν.
    pub cell_costs: Vec<f64>,
}

impl FirstOrder {
    /// Number of cells whose polygon is empty or carries zero mass.
    pub fn empty_cell_count(&self) -> usize {
        self.cell_masses.iter().filter(|&&m| m <= 0.0).count()
    }
}

/// One facet's contribution to the Hessian, stored once with `i < j`.
#[derive(Clone, Debug)]
pub struct FacetPair {
    pub i: usize,
    pub j: usize,
    /// ∂²g/∂φᵢ∂φⱼ = ∫ m/d dσ ≥ 0.
    pub w: f64,
    /// ∂²g/∂φᵢ∂zⱼ = −(zⱼ p₀ − p₁)/d.
    pub phi_i_z_j: Point,
    /// ∂²g/∂φⱼ∂zᵢ = −(zᵢ p₀ − p₁)/d.
    pub phi_j_z_i: Point,
    /// ∂²g/∂zᵢ∂zⱼ; the (j,i) block is its transpose.
    pub zz: Matrix2<f64>,
}

/// Sparse symmetric Hessian of `g`: off-diagonal facet blocks plus per-site
/// diagonals. z-vectors use the interleaved layout `x₀,y₀,x₁,y₁,…` in the
/// dense views.
#[derive(Clone, Debug)]
pub struct TransportHessian {
    pub n: usize,
    pub pairs: Vec<FacetPair>,
    /// ∂²g/∂φᵢ² = −Σⱼ wᵢⱼ.
    pub phiphi_diag: Vec<f64>,
    /// ∂²g/∂φᵢ∂zᵢ = +Σⱼ (zᵢ p₀ − p₁)/d over facets of cell i.
    pub phi_z_diag: Vec<Point>,
    /// ∂²g/∂zᵢ² = Mᵢ·I − Σⱼ ∫ (zᵢ−x)(zᵢ−x)ᵀ m/d dσ.
    pub zz_diag: Vec<Matrix2<f64>>,
}

impl TransportHessian {
    /// y = H_φφ x.
    pub fn apply_phiphi(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.phiphi_diag[i] * x[i];
        }
        for p in &self.pairs {
            y[p.i] += p.w * x[p.j];
            y[p.j] += p.w * x[p.i];
        }
    }

    /// w = H_φz v (z-vector in, φ-vector out).
    pub fn apply_phiz(&self, v: &[Point], w: &mut [f64]) {
        for i in 0..self.n {
            w[i] = self.phi_z_diag[i].dot(&v[i]);
        }
        for p in &self.pairs {
            w[p.i] += p.phi_i_z_j.dot(&v[p.j]);
            w[p.j] += p.phi_j_z_i.dot(&v[p.i]);
        }
    }

    /// out = H_zφ u = (H_φz)ᵀ u (φ-vector in, z-vector out).
    pub fn apply_zphi(&self, u: &[f64], out: &mut [Point]) {
        for i in 0..self.n {
            out[i] = self.phi_z_diag[i] * u[i];
        }
        for p in &self.pairs {
            out[p.j] += p.phi_i_z_j * u[p.i];
            out[p.i] += p.phi_j_z_i * u[p.j];
        }
    }

    /// out = H_zz v.
    pub fn apply_zz(&self, v: &[Point], out: &mut [Point]) {
        for i in 0..self.n {
            out[i] = self.zz_diag[i] * v[i];
        }
        for p in &self.pairs {
            out[p.i] += p.zz * v[p.j];
            out[p.j] += p.zz.transpose() * v[p.i];
        }
    }

    pub fn phiphi_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = self.phiphi_diag[i];
        }
        for p in &self.pairs {
            m[(p.i, p.j)] = p.w;
            m[(p.j, p.i)] = p.w;
        }
        m
    }

    /// n × 2n block H_φz (rows φ, columns interleaved z).
    pub fn phiz_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, 2 * self.n);
        let mut set = |r: usize, c: usize, v: Point| {
            m[(r, 2 * c)] = v.x;
            m[(r, 2 * c + 1)] = v.y;
        };
        for i in 0..self.n {
            set(i, i, self.phi_z_diag[i]);
        }
        for p in &self.pairs {
            set(p.i, p.j, p.phi_i_z_j);
            set(p.j, p.i, p.phi_j_z_i);
        }
        m
    }

    /// 2n × 2n block H_zz.
    pub fn zz_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * self.n, 2 * self.n);
        let mut set = |r: usize, c: usize, b: &Matrix2<f64>| {
            for a in 0..2 {
                for bb in 0..2 {
                    m[(2 * r + a, 2 * c + bb)] = b[(a, bb)];
                }
            }
        };
        for i in 0..self.n {
            set(i, i, &self.zz_diag[i]);
        }
        for p in &self.pairs {
            set(p.i, p.j, &p.zz);
            set(p.j, p.i, &p.zz.transpose());
        }
        m
    }

    /// Full symmetric 3n × 3n matrix ordered [φ; z-interleaved]; used by
    /// finite-difference validation.
    pub fn full_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(3 * n, 3 * n);
        let phiphi = self.phiphi_dense();
        let phiz = self.phiz_dense();
        let zz = self.zz_dense();
        m.view_mut((0, 0), (n, n)).copy_from(&phiphi);
        m.view_mut((0, n), (n, 2 * n)).copy_from(&phiz);
        m.view_mut((n, 0), (2 * n, n)).copy_from(&phiz.transpose());
        m.view_mut((n, n), (2 * n, 2 * n)).copy_from(&zz);
        m
    }
}

/// First and second derivatives of `g` at one configuration.
#[derive(Clone, Debug)]
pub struct TransportDerivatives {
    pub first: FirstOrder,
    pub hessian: TransportHessian,
}

fn check_match(cloud: &DiracCloud, diagram: &LaguerreDiagram) -> Result<(), TransportError> {
    if cloud.n() != diagram.n() {
        return Err(TransportError::CloudMismatch { cells: diagram.n(), sites: cloud.n() });
    }
    Ok(())
}

/// ν-moments of every cell (mass, first moment, transport cost against the
/// cell's own site).
pub(crate) fn cell_moments(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
) -> Result<Vec<CellMoments>, TransportError> {
    check_match(cloud, diagram)?;
    let one = |i: usize| {
        density
            .polygon_moments(&diagram.cells[i], cloud.positions()[i])
            .map_err(TransportError::from)
    };
    let n = cloud.n();
    if n < 64 {
        (0..n).map(one).collect()
    } else {
        (0..n).into_par_iter().map(one).collect()
    }
}

/// Evaluates `g(φ, z, m)`.
pub fn evaluate_g(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
) -> Result<f64, TransportError> {
    let moments = cell_moments(cloud, density, diagram)?;
    Ok(value_from_moments(cloud, &moments))
}

fn value_from_moments(cloud: &DiracCloud, moments: &[CellMoments]) -> f64 {
    let mut value = 0.0;
    for ((m, &target), &phi) in moments.iter().zip(cloud.masses()).zip(cloud.potentials()) {
        value += m.cost + phi * (target - m.mass);
    }
    value
}

/// Value, gradients, and per-cell quantities at one configuration.
pub fn first_derivatives(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
) -> Result<FirstOrder, TransportError> {
    let moments = cell_moments(cloud, density, diagram)?;
    Ok(first_from_moments(cloud, diagram, &moments))
}

pub(crate) fn first_from_moments(
    cloud: &DiracCloud,
    diagram: &LaguerreDiagram,
    moments: &[CellMoments],
) -> FirstOrder {
    let n = cloud.n();
    let mut grad_phi = Vec::with_capacity(n);
    let mut grad_z = Vec::with_capacity(n);
    let mut cell_masses = Vec::with_capacity(n);
    let mut barycenters = Vec::with_capacity(n);
    let mut cell_costs = Vec::with_capacity(n);
    for i in 0..n {
        let m = &moments[i];
        let z = cloud.positions()[i];
        grad_phi.push(cloud.masses()[i] - m.mass);
        grad_z.push(z * m.mass - m.first_moment);
        cell_masses.push(m.mass);
        let bary = if m.mass > 0.0 {
            m.first_moment / m.mass
        } else {
            diagram.cells[i].centroid().unwrap_or(z)
        };
        barycenters.push(bary);
        cell_costs.push(m.cost);
    }
    FirstOrder {
        value: value_from_moments(cloud, moments),
        grad_phi,
        grad_z,
        cell_masses,
        barycenters,
        cell_costs,
    }
}

/// Facets shorter than this contribute nothing to the Hessian; their
/// integrals vanish in the limit and skipping them avoids 0/0 noise.
const FACET_LENGTH_FLOOR: f64 = 1e-12;

/// Assembles first derivatives and all Hessian blocks.
pub fn second_derivatives(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
) -> Result<TransportDerivatives, TransportError> {
    let moments = cell_moments(cloud, density, diagram)?;
    let first = first_from_moments(cloud, diagram, &moments);
    let hessian = assemble_hessian(cloud, density, diagram, &first.cell_masses)?;
    Ok(TransportDerivatives { first, hessian })
}

pub(crate) fn assemble_hessian(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
    cell_masses: &[f64],
) -> Result<TransportHessian, TransportError> {
    check_match(cloud, diagram)?;
    let n = cloud.n();
    let positions = cloud.positions();

    let site_facets: Vec<(usize, usize, &crate::laguerre::Facet)> =
        diagram.site_facets().collect();
    let one = |&(i, j, facet): &(usize, usize, &crate::laguerre::Facet)| -> Result<Option<FacetPair>, TransportError> {
        let (zi, zj) = (positions[i], positions[j]);
        let d = (zj - zi).norm();
        if d < 1e-12 {
            return Err(TransportError::DegenerateConfiguration { i, j });
        }
        let length: f64 = facet.segments.iter().map(|s| (s[1] - s[0]).norm()).sum();
        if length < FACET_LENGTH_FLOOR {
            return Ok(None);
        }
        let mut raw = SegmentMoments::default();
        for seg in &facet.segments {
            raw.add(&density.segment_moments(seg[0], seg[1]));
        }
        let (p0, p1, p2) = (raw.p0, raw.p1, raw.p2);
        let w = p0 / d;
        let phi_i_z_j = -(zj * p0 - p1) / d;
        let phi_j_z_i = -(zi * p0 - p1) / d;
        let zz =
            (zi * zj.transpose() * p0 - zi * p1.transpose() - p1 * zj.transpose() + p2) / d;
        Ok(Some(FacetPair { i, j, w, phi_i_z_j, phi_j_z_i, zz }))
    };
    let computed: Vec<Result<Option<FacetPair>, TransportError>> = if site_facets.len() < 128 {
        site_facets.iter().map(one).collect()
    } else {
        site_facets.par_iter().map(one).collect()
    };
    let mut pairs = Vec::with_capacity(computed.len());
    for c in computed {
        if let Some(p) = c? {
            pairs.push(p);
        }
    }

    let mut phiphi_diag = vec![0.0; n];
    let mut phi_z_diag = vec![Point::zeros(); n];
    let mut zz_diag: Vec<Matrix2<f64>> =
        cell_masses.iter().map(|&m| Matrix2::identity() * m).collect();
    for p in &pairs {
        let (zi, zj) = (positions[p.i], positions[p.j]);
        phiphi_diag[p.i] -= p.w;
        phiphi_diag[p.j] -= p.w;
        // Diagonal mixed and zz terms reuse the facet's raw moments,
        // recovered from the stored blocks: zᵢp₀ − p₁ = −phi_j_z_i·d etc.
        phi_z_diag[p.i] += -p.phi_j_z_i;
        phi_z_diag[p.j] += -p.phi_i_z_j;
        // ∫(zᵢ−x)(zᵢ−x)ᵀ/d = ∫(zᵢ−x)(zⱼ−x)ᵀ/d + [∫(zᵢ−x)m/d dσ](zᵢ−zⱼ)ᵀ,
        // and the bracket is −phi_j_z_i, so the stored blocks suffice.
        let m_ii = p.zz + p.phi_j_z_i * (zj - zi).transpose();
        let m_jj = p.zz.transpose() - p.phi_i_z_j * (zj - zi).transpose();
        zz_diag[p.i] -= m_ii;
        zz_diag[p.j] -= m_jj;
    }

    Ok(TransportHessian { n, pairs, phiphi_diag, phi_z_diag, zz_diag })
}

/// The Blue-Noise curvature operator: the Schur complement
/// `H_zz − H_zφ (H_φφ)⁻¹ H_φz` taken on the mean-zero potential subspace,
/// where `(H_φφ)⁻¹` is realized by a Cholesky factor of the rank-one-shifted
/// matrix `F = −H_φφ + (s/n)·11ᵀ` (positive definite exactly when the facet
/// graph is connected).
pub struct ReducedHessian {
    hessian: TransportHessian,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ReducedHessian {
    pub fn new(hessian: TransportHessian) -> Result<Self, TransportError> {
        let n = hessian.n;
        let mut f = -hessian.phiphi_dense();
        let shift = (f.diagonal().sum() / n as f64).max(1e-12) / n as f64;
        for r in 0..n {
            for c in 0..n {
                f[(r, c)] += shift;
            }
        }
        let chol = nalgebra::Cholesky::new(f).ok_or(TransportError::SingularDual)?;
        Ok(ReducedHessian { hessian, chol })
    }

    pub fn n(&self) -> usize {
        self.hessian.n
    }

    pub fn hessian(&self) -> &TransportHessian {
        &self.hessian
    }

    /// out = (H_zz − H_zφ H_φφ⁻¹ H_φz) v.
    pub fn apply(&self, v: &[Point], out: &mut [Point]) {
        let n = self.n();
        let mut w = vec![0.0; n];
        self.hessian.apply_phiz(v, &mut w);
        // w is mean-zero analytically (Σᵢ ∂²g/∂φᵢ∂z = 0); project to keep
        // rounding out of the constant direction, then u = F⁻¹w solves
        // −H_φφ u = w with mean-zero u, i.e. H_φφ⁻¹ w = −u.
        let mean = w.iter().sum::<f64>() / n as f64;
        let mut u = DVector::from_iterator(n, w.iter().map(|x| x - mean));
        self.chol.solve_mut(&mut u);
        self.hessian.apply_zz(v, out);
        let mut corr = vec![Point::zeros(); n];
        self.hessian.apply_zphi(u.as_slice(), &mut corr);
        for (o, c) in out.iter_mut().zip(&corr) {
            *o += *c;
        }
    }

    /// Materializes the (structurally dense) 2n × 2n reduced matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let phiz = self.hessian.phiz_dense();
        let mut x = phiz.clone();
        for c in 0..2 * n {
            let mean = x.column(c).sum() / n as f64;
            for r in 0..n {
                x[(r, c)] -= mean;
            }
        }
        self.chol.solve_mut(&mut x);
        self.hessian.zz_dense() + phiz.transpose() * x
    }
}

/// Dense reduced Hessian at one configuration (φ should already be at the
/// dual optimum for the result to be the Blue-Noise curvature).
pub fn reduced_hessian(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    diagram: &LaguerreDiagram,
) -> Result<DMatrix<f64>, TransportError> {
    let derivs = second_derivatives(cloud, density, diagram)?;
    Ok(ReducedHessian::new(derivs.hessian)?.to_dense())
}

/// Voronoi (stippling) energy `G_S(z) = g(0, z, m̃)` with `m̃ᵢ = ν(𝒱ᵢ)`, and
/// its gradient rows `Mᵢ(zᵢ − z̄ᵢ)` — the mass term contributes no extra
/// gradient because m̃ is optimal. The ½ cost scaling matches `g`.
pub fn voronoi_energy(
    cloud: &DiracCloud,
    density: &BilinearDensity,
) -> Result<(f64, Vec<Point>), TransportError> {
    let diagram = voronoi_diagram(cloud, Rect::unit())?;
    let moments = cell_moments(cloud, density, &diagram)?;
    let value: f64 = moments.iter().map(|m| m.cost).sum();
    let grad = moments
        .iter()
        .zip(cloud.positions())
        .map(|(m, &z)| z * m.mass - m.first_moment)
        .collect();
    Ok((value, grad))
}

/// Boundary-facet share of a diagram (handy for diagnostics): total length
/// of wall segments per cell.
pub fn boundary_lengths(diagram: &LaguerreDiagram) -> Vec<f64> {
    let mut out = vec![0.0; diagram.n()];
    for f in &diagram.facets {
        if f.j == FacetSide::Boundary {
            out[f.i] = f.segments.iter().map(|s| (s[1] - s[0]).norm()).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GridInterp;
    use crate::laguerre::build_diagram;
    use crate::oracle::{fd_gradient, fd_jacobian};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn uniform() -> BilinearDensity {
        BilinearDensity::uniform()
    }

    /// A deterministic non-uniform density used by the FD tests.
    fn ramp_density() -> BilinearDensity {
        BilinearDensity::from_image_grid(
            4,
            4,
            &[
                1.0, 2.0, 3.0, 4.0, //
                2.0, 3.0, 4.0, 5.0, //
                1.5, 2.5, 3.5, 4.5, //
                1.0, 1.5, 2.0, 2.5,
            ],
            GridInterp::CellMean,
        )
        .unwrap()
    }

    fn diagram_of(cloud: &DiracCloud) -> LaguerreDiagram {
        build_diagram(cloud, Rect::unit()).unwrap()
    }

    fn lcg(state: &mut u64) -> f64 {
        // Deterministic unit-interval stream for test configurations.
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_cloud(n: usize, seed: u64, phi_scale: f64) -> DiracCloud {
        let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
        let positions: Vec<Point> = (0..n)
            .map(|_| Point::new(0.05 + 0.9 * lcg(&mut s), 0.05 + 0.9 * lcg(&mut s)))
            .collect();
        let potentials: Vec<f64> = (0..n).map(|_| phi_scale * (lcg(&mut s) - 0.5)).collect();
        let mut masses: Vec<f64> = (0..n).map(|_| 0.5 + lcg(&mut s)).collect();
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        DiracCloud::with_potentials(positions, masses, potentials).unwrap()
    }

    fn min_facet_length(diagram: &LaguerreDiagram) -> f64 {
        diagram
            .site_facets()
            .map(|(_, _, f)| f.segments.iter().map(|s| (s[1] - s[0]).norm()).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn centered_site_evaluates_to_one_twelfth() {
        let cloud = DiracCloud::new(vec![Point::new(0.5, 0.5)], vec![1.0]).unwrap();
        let diagram = diagram_of(&cloud);
        let g = evaluate_g(&cloud, &uniform(), &diagram).unwrap();
        assert_abs_diff_eq!(g, 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_potential_leaves_g_unchanged() {
        let cloud =
            DiracCloud::with_potentials(vec![Point::new(0.5, 0.5)], vec![1.0], vec![5.0]).unwrap();
        let diagram = diagram_of(&cloud);
        let g = evaluate_g(&cloud, &uniform(), &diagram).unwrap();
        // −φ·ν(Ω) and +φ·m cancel exactly for a probability density.
        assert_abs_diff_eq!(g, 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pair_value_matches_half_square_cost() {
        // Each half contributes ∫_{[0,½]×[0,1]} ½((x−¼)² + (y−½)²) dν
        // = ½(1/96 + 1/24) = 5/192, hence g = 5/96.
        let cloud = DiracCloud::new(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let diagram = diagram_of(&cloud);
        let g = evaluate_g(&cloud, &uniform(), &diagram).unwrap();
        assert_abs_diff_eq!(g, 5.0 / 96.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_invariance_on_a_random_configuration() {
        let cloud = random_cloud(9, 3, 0.02);
        let diagram = diagram_of(&cloud);
        let g0 = evaluate_g(&cloud, &ramp_density(), &diagram).unwrap();
        let shifted: Vec<f64> = cloud.potentials().iter().map(|p| p + 11.5).collect();
        let mut cloud2 = cloud.clone();
        cloud2.set_potentials(shifted).unwrap();
        let diagram2 = diagram_of(&cloud2);
        let g1 = evaluate_g(&cloud2, &ramp_density(), &diagram2).unwrap();
        assert_abs_diff_eq!(g0, g1, epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_pair_gradients_match_the_midpoint_bisector() {
        // Sites at x = 0.4 and 0.75 with φ = 0: bisector at x = 0.575.
        let cloud = DiracCloud::new(
            vec![Point::new(0.4, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let diagram = diagram_of(&cloud);
        let first = first_derivatives(&cloud, &uniform(), &diagram).unwrap();
        assert_abs_diff_eq!(first.grad_phi[0], -0.075, epsilon = 1e-12);
        assert_abs_diff_eq!(first.grad_phi[1], 0.075, epsilon = 1e-12);
        assert_abs_diff_eq!(first.cell_masses[0], 0.575, epsilon = 1e-12);
        assert_abs_diff_eq!(first.barycenters[0].x, 0.2875, epsilon = 1e-12);
        assert_abs_diff_eq!(first.barycenters[0].y, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_site_gradient_points_at_the_barycenter() {
        let cloud = DiracCloud::new(vec![Point::new(0.3, 0.7)], vec![1.0]).unwrap();
        let diagram = diagram_of(&cloud);
        let first = first_derivatives(&cloud, &uniform(), &diagram).unwrap();
        assert_abs_diff_eq!(first.grad_z[0].x, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(first.grad_z[0].y, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(first.grad_phi[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cvt_fixed_point_has_zero_gradients() {
        let cloud = DiracCloud::new(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let diagram = diagram_of(&cloud);
        let first = first_derivatives(&cloud, &uniform(), &diagram).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(first.grad_phi[i], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(first.grad_z[i].norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grad_phi_always_sums_to_zero() {
        for seed in 0..5 {
            let cloud = random_cloud(12, seed, 0.03);
            let diagram = diagram_of(&cloud);
            let first = first_derivatives(&cloud, &ramp_density(), &diagram).unwrap();
            let sum: f64 = first.grad_phi.iter().sum();
            assert!(sum.abs() <= 1e-10, "grad_phi must sum to zero on seed {seed}, got {sum}");
        }
    }

    /// Packs (φ, z) into one parameter vector for the FD oracles.
    fn pack(cloud: &DiracCloud) -> Vec<f64> {
        let mut x: Vec<f64> = cloud.potentials().to_vec();
        for p in cloud.positions() {
            x.push(p.x);
            x.push(p.y);
        }
        x
    }

    fn unpack(template: &DiracCloud, x: &[f64]) -> DiracCloud {
        let n = template.n();
        let potentials = x[..n].to_vec();
        let positions: Vec<Point> =
            (0..n).map(|i| Point::new(x[n + 2 * i], x[n + 2 * i + 1])).collect();
        DiracCloud::with_potentials(positions, template.masses().to_vec(), potentials).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let density = ramp_density();
        for seed in [1_u64, 7] {
            let cloud = random_cloud(6, seed, 0.02);
            let diagram = diagram_of(&cloud);
            assert!(min_facet_length(&diagram) > 1e-3, "test configuration too degenerate");
            let first = first_derivatives(&cloud, &density, &diagram).unwrap();
            let f = |x: &[f64]| {
                let c = unpack(&cloud, x);
                let d = diagram_of(&c);
                evaluate_g(&c, &density, &d).unwrap()
            };
            let fd = fd_gradient(f, &pack(&cloud), 1e-5);
            let mut analytic = first.grad_phi.clone();
            for gz in &first.grad_z {
                analytic.push(gz.x);
                analytic.push(gz.y);
            }
            for (k, (a, o)) in analytic.iter().zip(&fd).enumerate() {
                let denom = a.abs().max(o.abs()).max(1e-8);
                assert!(
                    (a - o).abs() / denom <= 1e-6,
                    "component {k} of seed {seed}: analytic {a} vs FD {o}"
                );
            }
        }
    }

    #[test]
    fn symmetric_pair_phiphi_cross_is_two() {
        // Facet x = ½ has length 1, m ≡ 1, d = ½ ⟹ ∂²g/∂φ¹∂φ² = 2.
        let cloud = DiracCloud::new(
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let diagram = diagram_of(&cloud);
        let d = second_derivatives(&cloud, &uniform(), &diagram).unwrap();
        assert_eq!(d.hessian.pairs.len(), 1);
        assert_abs_diff_eq!(d.hessian.pairs[0].w, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.hessian.phiphi_diag[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_site_zz_hessian_is_identity() {
        let cloud = DiracCloud::new(vec![Point::new(0.5, 0.5)], vec![1.0]).unwrap();
        let diagram = diagram_of(&cloud);
        let d = second_derivatives(&cloud, &uniform(), &diagram).unwrap();
        assert!(d.hessian.pairs.is_empty());
        assert_relative_eq!(d.hessian.zz_diag[0], Matrix2::identity(), epsilon = 1e-12);
        let reduced = reduced_hessian(&cloud, &uniform(), &diagram).unwrap();
        assert_relative_eq!(reduced, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn hessian_blocks_match_finite_differences() {
        let density = ramp_density();
        let cloud = random_cloud(10, 5, 0.02);
        let diagram = diagram_of(&cloud);
        assert!(min_facet_length(&diagram) > 1e-3, "test configuration too degenerate");
        let derivs = second_derivatives(&cloud, &density, &diagram).unwrap();
        let dense = derivs.hessian.full_dense();
        let f = |x: &[f64]| {
            let c = unpack(&cloud, x);
            let d = diagram_of(&c);
            let first = first_derivatives(&c, &density, &d).unwrap();
            let mut out = first.grad_phi;
            for gz in &first.grad_z {
                out.push(gz.x);
                out.push(gz.y);
            }
            out
        };
        let fd = fd_jacobian(f, &pack(&cloud), 1e-5);
        let dim = 3 * cloud.n();
        let mut worst = 0.0_f64;
        for r in 0..dim {
            for c in 0..dim {
                let a = dense[(r, c)];
                let o = fd[r][c];
                let denom = a.abs().max(o.abs()).max(1e-6);
                worst = worst.max((a - o).abs() / denom);
            }
        }
        assert!(worst <= 1e-4, "max relative Hessian defect {worst} exceeds 1e-4");
    }

    #[test]
    fn hessian_is_symmetric_with_zero_phiphi_row_sums() {
        let cloud = random_cloud(14, 11, 0.02);
        let diagram = diagram_of(&cloud);
        let derivs = second_derivatives(&cloud, &ramp_density(), &diagram).unwrap();
        let full = derivs.hessian.full_dense();
        let defect = (&full - full.transpose()).abs().max();
        assert!(defect <= 1e-12, "symmetry defect {defect}");
        let phiphi = derivs.hessian.phiphi_dense();
        for r in 0..cloud.n() {
            let row_sum: f64 = phiphi.row(r).sum();
            assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn phiphi_is_negative_semidefinite_on_mean_zero_vectors() {
        let cloud = random_cloud(12, 2, 0.02);
        let diagram = diagram_of(&cloud);
        let derivs = second_derivatives(&cloud, &ramp_density(), &diagram).unwrap();
        let mut s = 99_u64;
        for _ in 0..20 {
            let mut d: Vec<f64> = (0..cloud.n()).map(|_| lcg(&mut s) - 0.5).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            d.iter_mut().for_each(|v| *v -= mean);
            let mut hd = vec![0.0; cloud.n()];
            derivs.hessian.apply_phiphi(&d, &mut hd);
            let quad: f64 = d.iter().zip(&hd).map(|(a, b)| a * b).sum();
            assert!(quad <= 1e-12, "dᵀH_φφd = {quad} must be ≤ 0 for mean-zero d");
        }
    }

    #[test]
    fn zz_diagonal_assembly_identity() {
        // ∂²g/∂zᵢ² plus the neighbor (zᵢ−x)(zᵢ−x)ᵀ integrals must equal MᵢI.
        let density = ramp_density();
        let cloud = random_cloud(8, 17, 0.02);
        let diagram = diagram_of(&cloud);
        let derivs = second_derivatives(&cloud, &density, &diagram).unwrap();
        for i in 0..cloud.n() {
            let zi = cloud.positions()[i];
            let mut recovered = derivs.hessian.zz_diag[i];
            for (a, b, facet) in diagram.site_facets() {
                if a != i && b != i {
                    continue;
                }
                let other = if a == i { b } else { a };
                let d = (cloud.positions()[other] - zi).norm();
                let mut raw = SegmentMoments::default();
                for seg in &facet.segments {
                    raw.add(&density.segment_moments(seg[0], seg[1]));
                }
                let m_ii = (zi * zi.transpose() * raw.p0
                    - zi * raw.p1.transpose()
                    - raw.p1 * zi.transpose()
                    + raw.p2)
                    / d;
                recovered += m_ii;
            }
            let target = Matrix2::identity() * derivs.first.cell_masses[i];
            assert_relative_eq!(recovered, target, epsilon = 1e-10);
        }
    }

    #[test]
    fn reduced_hessian_is_symmetric_and_operator_matches_dense() {
        let cloud = random_cloud(9, 23, 0.0);
        let diagram = diagram_of(&cloud);
        let derivs = second_derivatives(&cloud, &ramp_density(), &diagram).unwrap();
        let reduced = ReducedHessian::new(derivs.hessian).unwrap();
        let dense = reduced.to_dense();
        let defect = (&dense - dense.transpose()).abs().max();
        assert!(defect <= 1e-10, "reduced Hessian symmetry defect {defect}");
        // Operator application agrees with the materialized matrix.
        let mut s = 5_u64;
        let v: Vec<Point> =
            (0..cloud.n()).map(|_| Point::new(lcg(&mut s) - 0.5, lcg(&mut s) - 0.5)).collect();
        let mut out = vec![Point::zeros(); cloud.n()];
        reduced.apply(&v, &mut out);
        let vflat = DVector::from_iterator(2 * cloud.n(), v.iter().flat_map(|p| [p.x, p.y]));
        let dense_out = &dense * vflat;
        for i in 0..cloud.n() {
            assert_abs_diff_eq!(out[i].x, dense_out[2 * i], epsilon = 1e-10);
            assert_abs_diff_eq!(out[i].y, dense_out[2 * i + 1], epsilon = 1e-10);
        }
    }

    #[test]
    fn voronoi_energy_matches_g_and_its_gradient() {
        let cloud = DiracCloud::new(vec![Point::new(0.5, 0.5)], vec![1.0]).unwrap();
        let (value, grad) = voronoi_energy(&cloud, &uniform()).unwrap();
        assert_abs_diff_eq!(value, 1.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad[0].norm(), 0.0, epsilon = 1e-12);
        // Four-site CVT: gradient vanishes.
        let cvt = DiracCloud::uniform_masses(vec![
            Point::new(0.25, 0.25),
            Point::new(0.75, 0.25),
            Point::new(0.25, 0.75),
            Point::new(0.75, 0.75),
        ])
        .unwrap();
        let (_, grad) = voronoi_energy(&cvt, &uniform()).unwrap();
        for g in grad {
            assert_abs_diff_eq!(g.norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn voronoi_energy_gradient_matches_finite_differences() {
        // The mass term m̃(z) is optimal, so the envelope theorem says the
        // plain per-cell gradient is exact; validate numerically.
        let density = ramp_density();
        let cloud = random_cloud(10, 31, 0.0);
        let x0: Vec<f64> =
            cloud.positions().iter().flat_map(|p| [p.x, p.y]).collect();
        let f = |x: &[f64]| {
            let positions: Vec<Point> =
                (0..cloud.n()).map(|i| Point::new(x[2 * i], x[2 * i + 1])).collect();
            let c = DiracCloud::new(positions, cloud.masses().to_vec()).unwrap();
            voronoi_energy(&c, &density).unwrap().0
        };
        let fd = fd_gradient(f, &x0, 1e-5);
        let (_, grad) = voronoi_energy(&cloud, &density).unwrap();
        for i in 0..cloud.n() {
            for (k, a) in [grad[i].x, grad[i].y].into_iter().enumerate() {
                let o = fd[2 * i + k];
                let denom = a.abs().max(o.abs()).max(1e-8);
                assert!(
                    (a - o).abs() / denom <= 1e-5,
                    "site {i} component {k}: analytic {a} vs FD {o}"
                );
            }
        }
    }

    #[test]
    fn mismatched_diagram_is_rejected() {
        let cloud = random_cloud(4, 1, 0.0);
        let other = random_cloud(5, 2, 0.0);
        let diagram = diagram_of(&other);
        let err = evaluate_g(&cloud, &uniform(), &diagram);
        assert!(matches!(err, Err(TransportError::CloudMismatch { cells: 5, sites: 4 })));
    }
}
