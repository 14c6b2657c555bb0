//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {field}: {reason}")]
    InvalidModel { field: String, reason: String },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("no sign change of f on [-X, X] at y = {y}")]
    NoRootBracketed { y: f64 },

    #[error("stationary tail mass {mass:e} exceeds tolerance {tol:e} at y = {y}; increase X")]
    TailMassExceeded { y: f64, mass: f64, tol: f64 },

    #[error("eigenvalue {index} has negative real part {value:e}")]
    SpectrumViolation { index: usize, value: f64 },

    #[error("retained eigenvalue {index} has imaginary part {imag:e}")]
    ComplexPairUnsupported { index: usize, imag: f64 },

    #[error("quadrature did not converge for {tensor}[{k}][{j}] at y = {y}: relative change {change:e}")]
    QuadratureDivergence {
        tensor: &'static str,
        k: usize,
        j: usize,
        y: f64,
        change: f64,
    },

    #[error("time step unstable at t = {t}: |value| exceeded {cap:e}")]
    StepUnstable { t: f64, cap: f64 },

    #[error("degenerate denominator in spectral gap term {term}: {value:e}")]
    DegenerateDenominator { term: String, value: f64 },

    #[error("Lyapunov-Perron iteration not contracting (ratio {ratio}) after {iterations} iterations")]
    NoContraction { ratio: f64, iterations: usize },

    #[error("Lyapunov-Perron horizon too short: doubling changed the graph by {change:e}")]
    HorizonTooShort { change: f64 },

    #[error("Lyapunov-Perron iteration cap {cap} reached (last change {change:e})")]
    IterationCap { cap: usize, change: f64 },

    #[error("mass increased by {increase:e} at t = {t}")]
    MassAnomaly { t: f64, increase: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("rate fit unavailable for {quantity}: only {valid} valid points")]
    FitUnavailable { quantity: String, valid: usize },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
