use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid quantum numbers: {0}")]
    InvalidQuantumNumbers(String),

    #[error("Bethe equations not solved after {iterations} iterations (residual {residual:e})")]
    BetheNonConvergence { iterations: usize, residual: f64 },

    #[error("singular Gaudin matrix (degenerate or unsolved state)")]
    SingularGaudin,

    #[error("TBA iteration did not converge (residual {residual:e})")]
    TbaNonConvergence { residual: f64 },

    #[error("could not bracket {0}")]
    Bracketing(String),

    #[error("not enough tail nodes for a power-law fit: {0}")]
    InsufficientTail(String),

    #[error("density mismatch: solution has n = {solution}, requested N/L = {requested}")]
    DensityMismatch { solution: f64, requested: f64 },

    #[error("could not condition the sample to {target} particles")]
    Conditioning { target: usize },

    #[error("copy acceptance rate {rate:.4} below 1% after {tries} draws (window too tight)")]
    LowAcceptance { rate: f64, tries: usize },

    #[error("parameter mismatch: {0}")]
    Mismatch(String),

    #[error("brute-force oracle supports at most {max} particles, got {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("quadrature did not converge under refinement (relative change {change:e})")]
    Quadrature { change: f64 },

    #[error("invalid excitation tag: {0}")]
    InvalidTag(String),

    #[error("line shape requested for an empty column k = {0}")]
    EmptyColumn(i64),

    #[error("momentum {0} not present in the grid")]
    MissingMomentum(i64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
