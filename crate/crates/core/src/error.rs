use thiserror::Error;

/// Errors raised across the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("control {0:?} is outside the admissible set")]
    ControlOutOfSet(Vec<f64>),

    #[error("non-finite state component encountered")]
    NonFiniteState,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("hamiltonian minimizer is undefined: costate block norm below tolerance")]
    DegenerateMinimizer,

    #[error("problem is not control-affine")]
    NotControlAffine,

    #[error("grid spacing differs across axes: {spacings:?}")]
    NonUniformSpacing { spacings: Vec<f64> },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("every control is degenerate at node {node}")]
    AllControlsDegenerate { node: usize },

    #[error("no grid node belongs to the target")]
    NoTargetNode,

    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("finite-difference stencil leaves the domain")]
    StencilOutsideDomain,

    #[error("sampling ball leaves the domain")]
    BallOutsideDomain,

    #[error("trajectory left the domain at t = {t}")]
    LeftDomain { t: f64 },

    #[error("trajectory made no progress towards the target at t = {t}")]
    NoProgress { t: f64 },

    #[error("structure mismatch: spec declares {expected} arcs, estimate has {found}")]
    StructureMismatch { expected: usize, found: usize },

    #[error("singular control undefined: coefficient of u vanishes")]
    SingularUndefined,

    #[error("arc times are not ordered within [0, t_f]: {0:?}")]
    ArcOrderViolation(Vec<f64>),

    #[error("root finder did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("jacobian is singular")]
    SingularJacobian,

    #[error("unknown benchmark id `{0}`")]
    UnknownId(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
