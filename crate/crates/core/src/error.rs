use thiserror::Error;

/// Errors produced anywhere in model construction, fitting and evaluation.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CtmError {
    #[error("value {value} lies outside the basis domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("unknown level '{0}'")]
    UnknownLevel(String),

    #[error("invalid size: {0}")]
    Size(String),

    #[error("invalid penalty structure: {0}")]
    Structure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("df target {target} is not attainable; attainable range is [{min}, {max}]")]
    Calibration { target: f64, min: f64, max: f64 },

    #[error("linear system is singular: {0}")]
    Solve(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite negative gradient at boosting iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid grid margin {0}: the lowest grid point must lie strictly below the smallest response")]
    Margin(f64),

    #[error("probability {tau} is not bracketed on the grid; attained cdf range is [{lo}, {hi}]")]
    Tail { tau: f64, lo: f64, hi: f64 },

    #[error("transformation is not monotone between {lower} and {upper}")]
    Monotonicity { lower: f64, upper: f64 },

    #[error("unsupported model document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("cannot parse model document: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CtmError>;
