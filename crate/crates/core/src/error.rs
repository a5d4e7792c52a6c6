use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inserting knot {knot} would exceed multiplicity {degree} (current multiplicity {multiplicity})")]
    Multiplicity { knot: f64, multiplicity: usize, degree: usize },

    #[error("invalid patch: {0}")]
    InvalidPatch(String),

    #[error("basis transformation is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("element {element} is inverted (det J = {det:.3e})")]
    InvertedElement { element: usize, det: f64 },

    #[error("operation needs a {expected} element, element {element} is not one")]
    WrongElementKind { element: usize, expected: &'static str },

    #[error("point location failed after {iterations} iterations (residual {residual:.3e})")]
    PointLocation { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("least-squares matrix is rank deficient (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("degenerate hybrid quadrature point (|q| = {norm:.3e})")]
    DegeneratePoint { norm: f64 },

    #[error("degenerate surface measure at ({u}, {v})")]
    SurfaceMeasure { u: f64, v: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64, history: Vec<f64> },
}
