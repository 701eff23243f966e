use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid sequence set: {0}")]
    InvalidSet(String),

    #[error("invalid noise spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge on [{a}, {b}] after {panels} panels (estimated error {error:e})")]
    QuadratureDiverged { a: f64, b: f64, panels: usize, error: f64 },

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("out of coverage: tau'={tau_prime} not in [{lo}, {hi}]")]
    OutOfCoverage { tau_prime: f64, lo: f64, hi: f64 },

    #[error("optimizer failed at tau'={tau_prime}: {reason}")]
    Optimizer { tau_prime: f64, reason: String },

    #[error("pulse count {0} exceeds the supported ceiling of 20")]
    TooManyPulses(usize),

    #[error("landscape is not unimodal: {reason}")]
    NotUnimodal {
        reason: String,
        /// Sampled (tau', error) profile for diagnosis.
        profile: Vec<(f64, f64)>,
    },

    #[error("probe failure: {0}")]
    Probe(String),

    #[error("probe protocol violation: {0}")]
    Protocol(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
