//! Semi-discrete optimal transport in 2D.
//!
//! Computes the quadratic-cost (2-Wasserstein) transport between a bilinear
//! image density on the unit square and a weighted point cloud, through the
//! concave Kantorovich dual. Laguerre (power) diagrams give the transport
//! plan; cell and facet integrals against the density give *exact* first and
//! second derivatives of the dual, which power a damped-Newton dual solver,
//! Lloyd-type descent, and a Newton-CG point optimizer for stippling and
//! blue-noise problems.
//!
//! Module map:
//! - [`geom`]: points, rectangles, convex polygons, half-plane clipping;
//! - [`laguerre`]: point clouds and clipped Laguerre/Voronoi diagrams;
//! - [`density`]: bilinear densities and exact moment/facet quadrature;
//! - [`transport`]: the dual objective and its derivatives;
//! - [`solvers`]: dual ascent, Lloyd, and Newton-CG;
//! - [`oracle`]: independent Riemann/finite-difference checks.

pub mod density;
pub mod error;
pub mod geom;
pub mod laguerre;
pub mod oracle;
pub mod solvers;
pub mod transport;

pub use density::{BilinearDensity, CellMoments, FacetIntegrals, GridInterp, SegmentMoments};
pub use error::{DensityError, GeometryError, SolverError, TransportError};
pub use geom::{ConvexPolygon, Point, Rect};
pub use laguerre::{
    build_diagram, voronoi_diagram, DiracCloud, Facet, FacetSide, LaguerreDiagram,
    COINCIDENCE_TOL,
};
pub use solvers::{
    cg_lanczos, lloyd_solve, newton_solve, solve_dual, CgResult, DualReport, ProblemMode,
    SolveReport, SolverConfig, SolverTrace, Termination, TraceRecord,
};
pub use transport::{
    evaluate_g, first_derivatives, reduced_hessian, second_derivatives, voronoi_energy,
    FirstOrder, ReducedHessian, TransportDerivatives, TransportHessian,
};
