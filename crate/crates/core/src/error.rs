use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("numerical blow-up: {0}")]
    NumericalBlowUp(String),
    #[error("point is behind the camera (x_c = {0})")]
    BehindCamera(f64),
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no periodicity found (autocorrelation peak {0:.3})")]
    NoPeriodicity(f64),
    #[error("blade model fit failed: {0}")]
    FitFailed(String),
    #[error("tracking lost: {0}")]
    TrackingLost(String),
    #[error("degenerate interval: tf - t0 = {0}")]
    DegenerateInterval(f64),
    #[error("estimator not ready: {0}")]
    EstimatorNotReady(String),
    #[error("unreliable depth: bounding box height {0:.2} px")]
    UnreliableDepth(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
