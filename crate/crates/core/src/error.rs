use thiserror::Error;

/// Everything that can go wrong between loading a config and writing results.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative rate: {name} = {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("non-positive frequency: {name} = {value}")]
    NonPositiveFrequency { name: &'static str, value: f64 },
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("invalid spectral density: {0}")]
    BadDensity(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("bad interval: {0}")]
    BadInterval(String),
    #[error("time {t} ns outside protocol span [{start}, {end})")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("time step too large: Omega*dt = {0} rad (limit 0.05)")]
    StepTooLarge(f64),
    #[error("non-finite value encountered at t = {0} ns")]
    NonFinite(f64),
    #[error("Newton iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("modes are not split: Omega = {omega} rad/ns <= HWHM/2 = {limit} rad/ns")]
    NotSplit { omega: f64, limit: f64 },
    #[error("insufficient decay data: {0}")]
    InsufficientDecay(String),
    #[error("no oscillation found: {0}")]
    NoOscillation(String),
    #[error("trajectory not steady: {0}")]
    NotSteady(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error in `{field}`: {constraint}")]
    Validation { field: String, constraint: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::Validation { .. }
            | Error::NegativeRate { .. }
            | Error::NonPositiveFrequency { .. }
            | Error::BadGrid(_)
            | Error::BadDensity(_)
            | Error::BadInterval(_)
            | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
