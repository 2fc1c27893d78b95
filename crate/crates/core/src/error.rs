use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different level bases")]
    BasisMismatch,

    #[error("unknown level label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate level label `{0}`")]
    DuplicateLabel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("model {0} does not provide {1}")]
    UnsupportedModel(&'static str, &'static str),

    #[error("adiabaticity condition violated: omega = {omega} must exceed 10 * gamma = {}", 10.0 * gamma)]
    Adiabaticity { omega: f64, gamma: f64 },

    #[error("numerical instability: non-finite amplitude at t = {t}")]
    NumericalInstability { t: f64 },

    #[error("integrator violation: squared norm grew from {before} to {after} at t = {t}")]
    IntegratorViolation { t: f64, before: f64, after: f64 },

    #[error("adiabaticity failure: leakage {leakage:.3e} out of the computational subspace exceeds {limit}")]
    LeakageExceeded { leakage: f64, limit: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("degeneracy crossing at t = {t}: null-space dimension {found}, expected {expected}")]
    DegeneracyCrossing {
        t: f64,
        expected: usize,
        found: usize,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical propagation itself, as opposed to
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalInstability { .. }
                | Error::IntegratorViolation { .. }
                | Error::LeakageExceeded { .. }
                | Error::DegeneracyCrossing { .. }
        )
    }
}
