use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel not resolved by the grid: eps*s = {scale:.3e} < 2h = {two_h:.3e}")]
    Unresolved { scale: f64, two_h: f64 },

    #[error("numerical blow-up at step {step} (t = {time:.6}): |state| reached {magnitude:.3e}")]
    BlowUp { step: usize, time: f64, magnitude: f64 },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("particle {index} at {position:?} lies outside the grid")]
    Coverage { index: usize, position: Vec<f64> },

    #[error("history gap: {0}")]
    HistoryGap(String),

    #[error("unknown observable `{0}`")]
    UnknownObservable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("run at eps = {eps} failed: {source}")]
    Sweep {
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error (or the run error it wraps) is a blow-up.
    pub fn is_blow_up(&self) -> bool {
        match self {
            Error::BlowUp { .. } => true,
            Error::Sweep { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::InvalidParameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {x}")))
    }
}
