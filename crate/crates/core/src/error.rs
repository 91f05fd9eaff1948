//! Error types shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A model file could not be parsed. Reports the offending line and key.
    #[error("config error at line {line}, key `{key}`: {msg}")]
    Config { line: usize, key: String, msg: String },

    /// A model failed semantic validation after parsing.
    #[error("invalid model: {msg}")]
    Model { msg: String },

    /// An argument fell outside the domain of an operation.
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A single reflection step would overshoot both ends of the interval.
    #[error("step of size {step:.6e} too large for an interval of width {beta:.6e}")]
    StepTooLarge { step: f64, beta: f64 },

    /// The value-function iteration did not reach its tolerance.
    #[error("no convergence after {sweeps} sweeps, residual {residual:.3e}")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// An adversary produced a NaN or infinite intensity.
    #[error("non-finite intensity for class {class}: {value}")]
    NonFiniteIntensity { class: usize, value: f64 },

    /// An adversary would drive an intensity to zero or below at this n.
    #[error("nonpositive intensity for class {class} at n = {n}; smallest admissible n is {min_n}")]
    IntensityNonpositive { class: usize, n: u64, min_n: u64 },

    /// A policy returned an allocation that violates admissibility. A bug, fail fast.
    #[error("policy produced an infeasible allocation: {msg}")]
    PolicyInfeasible { msg: String },

    /// Cost accounting was asked to replay a trajectory without its intensity log.
    #[error("trajectory lacks the per-interval intensity log required for cost accounting")]
    MissingIntensityLog,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
