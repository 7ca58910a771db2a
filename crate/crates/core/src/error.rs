//! Error types, grouped by subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("positions/masses/potentials have mismatched lengths ({positions}/{masses}/{potentials})")]
    LengthMismatch { positions: usize, masses: usize, potentials: usize },

    #[error("masses must be non-negative and sum to 1 within 1e-12 (sum = {sum})")]
    BadMasses { sum: f64 },

    #[error("position {index} is not finite")]
    NonFinitePosition { index: usize },

    #[error("sites {i} and {j} coincide (distance {dist:.3e} < 1e-12); separate them or jitter")]
    CoincidentSites { i: usize, j: usize, dist: f64 },
}

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("density grid is empty")]
    EmptyGrid,

    #[error("density value at grid index ({col}, {row}) is negative or non-finite: {value}")]
    BadValue { col: usize, row: usize, value: f64 },

    #[error("density is identically zero")]
    AllZero,

    #[error("corner-value interpretation needs at least a 2x2 grid, got {width}x{height}")]
    GridTooSmall { width: usize, height: usize },

    #[error("polygon is not convex counter-clockwise within tolerance")]
    NonConvexPolygon,

    #[error("polygon vertex ({x}, {y}) lies outside the unit square by more than 1e-9")]
    OutsideDomain { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("diagram has {cells} cells but the cloud has {sites} sites")]
    CloudMismatch { cells: usize, sites: usize },

    #[error("sites {i} and {j} are closer than 1e-12; facet integrals are not defined")]
    DegenerateConfiguration { i: usize, j: usize },

    #[error("phi-phi Hessian is singular on the mean-zero subspace (disconnected facet graph?)")]
    SingularDual,

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {reason}")]
    BadConfig { reason: String },

    #[error("dual ascent stalled: cell {site} stayed empty over {iterations} iterations while its target mass {target_mass:.3e} is positive")]
    EmptyCellStall { site: usize, target_mass: f64, iterations: usize },

    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl From<GeometryError> for SolverError {
    fn from(e: GeometryError) -> Self {
        SolverError::Transport(TransportError::Geometry(e))
    }
}

impl From<DensityError> for SolverError {
    fn from(e: DensityError) -> Self {
        SolverError::Transport(TransportError::Density(e))
    }
}
