use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed specification: {0}")]
    MalformedSpec(String),
    #[error("negative weight {value} at cell {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("non-finite weight at cell {index}")]
    NonFiniteWeight { index: usize },
    #[error("total mass is zero")]
    ZeroTotalMass,
    #[error("mollification scale {eps} is below the grid spacing {spacing}")]
    EpsTooSmall { eps: f64, spacing: f64 },
    #[error("stencil radius {radius} is below the minimum {min}")]
    RadiusTooSmall { radius: f64, min: f64 },
    #[error("iterative solve did not reach tolerance within {iterations} iterations (residual {residual})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("vector field is not admissible: {0}")]
    NotAdmissible(String),
    #[error("region is empty after erosion")]
    EmptyRegion,
    #[error("flux graph is inconsistent: imbalances sum to {0}")]
    Inconsistent(f64),
    #[error("slope estimate did not stabilize: last increment {increment} > {tolerance}")]
    NotStabilized { increment: f64, tolerance: f64 },
    #[error("operands are bound to different grids")]
    MeasureMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear program failed: {0}")]
    LpFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
