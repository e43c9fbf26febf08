use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("no turning points at E = {0}")]
    NoTurningPoints(f64),
    #[error("failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("energy {energy} outside window [{lo}, {hi}]")]
    OutOfWindow { energy: f64, lo: f64, hi: f64 },
    #[error("alpha has no interior minimum in the window")]
    NoInteriorMinimum,
    #[error("alpha has {0} local minima in the window")]
    MultipleMinima(usize),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("overflow guard: {0}")]
    Overflow(String),
    #[error("outside domain of validity: {0}")]
    Domain(String),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("field leaks to grid edge: {0}")]
    Leakage(String),
    #[error("evolution unstable: {0}")]
    Stability(String),
    #[error("bad packet placement: {0}")]
    Placement(String),
    #[error("transmitted part not separated: {0}")]
    NotSeparated(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Errors caused by bad input rather than numerical trouble.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::HypothesisViolation(_)
                | Error::InvalidDensity(_)
                | Error::Config(_)
                | Error::OutOfWindow { .. }
                | Error::Placement(_)
                | Error::GridMismatch(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
