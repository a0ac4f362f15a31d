use thiserror::Error;

/// Errors raised by the numerical engines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (dimension mismatch, out-of-range value, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A matrix that must be symmetric positive semidefinite is not, beyond tolerance.
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    /// Grid / scheme configuration is unusable (stability bound violated, missing boundary row, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The solve produced non-finite values.
    #[error("solver diverged at time step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// A strategy violated its admissibility constraint during simulation.
    #[error("strategy infeasible at time step {step}: {detail}")]
    StrategyInfeasible { step: usize, detail: String },

    /// A numeric sub-procedure (derivative evaluation, eigensolve) failed.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
