use alloc::string::String;

/// Errors raised by the design, solver and selection layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("sensor subset is empty")]
    EmptySubset,
    #[error("sensor id {id} is out of range for a catalog of {len} sensors")]
    InvalidSensor { id: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    Symmetry { asymmetry: f64 },
    #[error("matrix is not Hurwitz (max real eigenvalue part {max_real:.6e})")]
    Unstable { max_real: f64 },
    #[error("assignment is missing variable `{0}`")]
    Assignment(String),
    #[error("ill-posed program: {0}")]
    Program(String),
    #[error("no certified design exists for the requested bound: {0}")]
    InfeasibleDesign(String),
    #[error("estimator recovery failed: {0}")]
    Recovery(String),
    #[error("exhaustive search needs {needed} evaluations, budget is {budget}")]
    Budget { needed: u128, budget: u128 },
}

pub type Result<T> = core::result::Result<T, Error>;
