use thiserror::Error;

/// Errors raised by the grid, operators, steppers and checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("stalled step at t = {t}: dt = {dt:e} fell below dt_min without gradient growth")]
    StalledStep { t: f64, dt: f64 },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("empty admissible window: {0}")]
    EmptyWindow(String),

    #[error("no admissible barrier parameters: {0}")]
    NoAdmissibleParams(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("insufficient collar: {0}")]
    InsufficientCollar(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("time alignment: {0}")]
    TimeAlignment(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
