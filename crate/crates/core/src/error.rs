use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rescaled time s = {0} lies outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("degenerate spectrum at s = {s}: minimum level spacing {gap:e}")]
    Degenerate { s: f64, gap: f64 },

    #[error("eigenvector tracking lost at s = {s}: best overlap {overlap:.3} (grid too coarse)")]
    TrackingLost { s: f64, overlap: f64 },

    #[error("step size underflow at t = {t:e} s: about {required} steps would be required")]
    StepUnderflow { t: f64, required: u64 },

    #[error("integrator did not converge: {0}")]
    NonConvergence(String),

    #[error("state is not normalized (norm = {0})")]
    NotNormalized(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("perturbative estimate undefined: {0}")]
    Resonant(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
