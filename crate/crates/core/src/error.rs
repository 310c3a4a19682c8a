use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probability vector is empty")]
    EmptySource,

    #[error("non-positive probability mass {value} at index {index}")]
    NonPositiveMass { index: usize, value: f64 },

    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid distortion measure: {0}")]
    InvalidDistortion(String),

    #[error("type atlas would hold {count} entries, cap is {cap}")]
    AtlasTooLarge { count: f64, cap: f64 },

    #[error("solver did not converge after {iterations} iterations (gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("distortion {d} outside the nontrivial range ({lo}, {hi})")]
    DOutOfRange { d: f64, lo: f64, hi: f64 },

    #[error("finite-difference step {0} leaves the simplex interior")]
    StepTooLarge(f64),

    #[error("rate-distortion solver failed: {0}")]
    SolverFailure(String),

    #[error("exponent solver failed: {0}")]
    ExponentSolverFailure(String),

    #[error("quadratic fit of the exponent is poor (relative residual {0:.3})")]
    PoorFit(f64),

    #[error("rate {rate} exceeds the largest rate-distortion value on the alphabet")]
    Infeasible { rate: f64 },

    #[error("exponent grid too large: {0}")]
    GridCapExceeded(String),

    #[error("argument outside domain: {0}")]
    DomainError(String),

    #[error("dispersion is zero; normal-approximation quantity not applicable")]
    ZeroVariance,

    #[error("rate {rate} below the rate-distortion function {rdf}")]
    RateBelowRdf { rate: f64, rdf: f64 },

    #[error("enumeration of {0} words exceeds the cap")]
    EnumerationTooLarge(f64),

    #[error("coverage target unreachable even with every reproduction word")]
    Unreachable,

    #[error("exhaustive search space too large: {0}")]
    SearchSpaceTooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
