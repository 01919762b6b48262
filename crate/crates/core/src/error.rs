use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid spline parameters: {0}")]
    SplineParams(String),

    #[error("Gram matrix is not positive definite (pivot {pivot:.3e})")]
    DegenerateGram { pivot: f64 },

    #[error("point lies {distance:.3e} away from the prescribed manifold")]
    OffManifold { distance: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("Sinkhorn iterations did not converge after {iterations} steps (marginal residual {residual:.3e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error("training diverged in {phase} phase at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        phase: String,
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("integration failed on trajectory {trajectory}: {reason}")]
    Integration { trajectory: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
