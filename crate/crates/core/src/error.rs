use thiserror::Error;

/// Errors raised when an input falls outside the domain of a computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("transmission eta must lie in (0, 1], got {0}")]
    Transmission(f64),
    #[error("modulation width d must be positive and finite, got {0}")]
    ModulationWidth(f64),
    #[error("effective amplitude E must be finite and non-negative, got {0}")]
    Amplitude(f64),
    #[error("quadrature outcome x must be finite, got {0}")]
    Outcome(f64),
    #[error("bit value must be 0 or 1, got {0}")]
    Bit(u8),
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid search interval [{lo}, {hi}]")]
    Interval { lo: f64, hi: f64 },
    #[error("event count must be at least 1")]
    EmptySession,
}

pub type Result<T> = std::result::Result<T, Error>;
