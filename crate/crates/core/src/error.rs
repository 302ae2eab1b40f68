use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("time grid is not uniform: step {index} is {step} s, expected {expected} s")]
    NonUniformGrid { index: usize, step: f64, expected: f64 },

    #[error("covariance matrix is ill-conditioned: Cholesky failed with jitter ladder {ladder:?}")]
    IllConditioned { ladder: Vec<f64> },

    #[error("posterior variance {value} at index {index} is negative beyond tolerance {tolerance}")]
    NegativeVariance { index: usize, value: f64, tolerance: f64 },

    #[error("training failed on every restart: {0}")]
    TrainingFailed(String),

    #[error("series has zero RMS; cannot scale noise or normalize")]
    ZeroRms,

    #[error("degenerate flow: horizontal relative velocity {0} m/s is below 1e-9")]
    DegenerateFlow(f64),

    #[error(
        "effective angle {alpha_deg:.3} deg for {component} coefficient is outside validity range ±{limit_deg:.3} deg"
    )]
    CoefficientRange {
        component: &'static str,
        alpha_deg: f64,
        limit_deg: f64,
    },

    #[error("buffeting response diverged at step {step} (t = {time} s): |q| = {magnitude} exceeds {threshold}")]
    Divergence {
        step: usize,
        time: f64,
        magnitude: f64,
        threshold: f64,
    },

    #[error("time grids differ between modal inputs: {0}")]
    GridMismatch(String),
}

impl Error {
    /// Errors caused by user-supplied inputs rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::LengthMismatch { .. }
                | Error::NonUniformGrid { .. }
                | Error::ZeroRms
                | Error::GridMismatch(_)
        )
    }
}
