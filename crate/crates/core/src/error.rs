use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// One of the standing assumptions on the coefficients or initial data fails.
    #[error("assumption violated ({clause}): {detail}")]
    AssumptionViolation { clause: &'static str, detail: String },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} must be nonnegative, entry {index} is {value}")]
    NegativeInput {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("relative entropy undefined: reference is positive at {what}[{index}] but the state vanishes there")]
    UndefinedEntropy { what: &'static str, index: usize },

    #[error("step rejected: denominator 1 - dt*G is {denominator} for trait {trait_index}")]
    StepRejected { trait_index: usize, denominator: f64 },

    #[error(
        "fixed-point iteration did not reach tolerance after {iterations} iterations (last increment {increment:e})"
    )]
    FixedPointDiverged { iterations: usize, increment: f64 },

    #[error("time step {dt} is not below the positivity bound mu0 = {mu0}")]
    Mu0Violation { dt: f64, mu0: f64 },

    #[error("at step {step} (t = {time}): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("state invalid after step {step}: {detail}")]
    InvalidState { step: usize, detail: String },

    #[error("ESD solver did not converge in {maxit} iterations (KKT residual {residual:e})")]
    NotConverged { maxit: usize, residual: f64 },

    #[error("brute-force search supports at most 3 traits, got {0}")]
    DimensionTooLarge(usize),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("Newton iteration failed: {0}")]
    NewtonFailed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for field `{field}`: {message}")]
    Validation { field: String, message: String },
}
