use alloc::string::String;
use core::fmt;

/// Errors produced by parameter validation, ODE integration, and simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Market clearing identities violated (F+G=1, a0=aG).
    Clearing(String),
    /// Cost convexity requirement violated (q^2 <= eps).
    Convexity(String),
    /// A parameter is outside its admissible range.
    Range(String),
    /// A coefficient path was supplied on an incompatible time grid.
    GridMismatch { expected: usize, got: usize },
    /// Backward integration escaped the configured bound.
    BlowUp { time: f64, value: f64 },
    /// The Riccati matrix path lost symmetry beyond tolerance.
    LostSymmetry { time: f64, defect: f64 },
    /// A simulated state stopped being finite.
    NonFinite { path: u64, time: f64 },
    /// The ensemble lacks data required by the requested reduction.
    UnsupportedInput(String),
    /// No retained path satisfies the requested conditioning.
    NoMatchingPath(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Clearing(m) => write!(f, "clearing violation: {m}"),
            Error::Convexity(m) => write!(f, "convexity violation: {m}"),
            Error::Range(m) => write!(f, "range violation: {m}"),
            Error::GridMismatch { expected, got } => {
                write!(f, "grid mismatch: expected {expected} points, got {got}")
            }
            Error::BlowUp { time, value } => {
                write!(f, "integration blow-up at t={time}: |value|={value}")
            }
            Error::LostSymmetry { time, defect } => {
                write!(f, "symmetry lost at t={time}: defect={defect}")
            }
            Error::NonFinite { path, time } => {
                write!(f, "non-finite state on path {path} at t={time}")
            }
            Error::UnsupportedInput(m) => write!(f, "unsupported input: {m}"),
            Error::NoMatchingPath(m) => write!(f, "no matching path: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
