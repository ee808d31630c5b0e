use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcfError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("axis {axis} out of range for n = {n}")]
    Axis { axis: usize, n: usize },
    #[error("matrix not positive definite at site {site}: eigenvalue {eig:e}")]
    NotPositive { site: usize, eig: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("tensor signature mismatch: {0}")]
    Signature(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("initial data not positive definite: {0}")]
    NotAdmissible(String),
    #[error("integrator halted at t = {t}: {reason}")]
    Halt { t: f64, reason: String },
    #[error("eigensolver did not converge, residual {0:e}")]
    NoConvergence(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PcfError>;
