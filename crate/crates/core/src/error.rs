use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid code distance {0}: must be odd and at least 3")]
    InvalidDistance(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("correction does not reproduce the syndrome")]
    CorrectionMismatch,

    #[error("distance {d} exceeds the contraction limit {limit}")]
    ContractionLimit { d: usize, limit: usize },

    #[error("the brute-force oracle only supports d = 3, got d = {0}")]
    OracleSize(usize),

    #[error("non-physical Choi matrix: coherence magnitude {0}")]
    NonPhysical(f64),

    #[error("missing kernel coverage: {0}")]
    MissingCoverage(String),

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bisection bracket does not straddle the target: p(0) = {lo} at lower end, {hi} at upper end")]
    NotBracketing { lo: f64, hi: f64 },

    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
