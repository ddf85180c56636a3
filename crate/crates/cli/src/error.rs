use ctm_core::CtmError;
use thiserror::Error;

/// Command failures, partitioned by exit status.
#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    /// Exit status following the BSD `sysexits` convention.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 65,
            CliError::Numeric(_) => 70,
            CliError::Io(_) => 74,
            CliError::Config(_) => 78,
        }
    }

    pub fn from_core(e: CtmError) -> Self {
        let msg = e.to_string();
        match e {
            CtmError::Input(_)
            | CtmError::Domain { .. }
            | CtmError::UnknownLevel(_)
            | CtmError::Degenerate(_)
            | CtmError::Dimension(_)
            | CtmError::Version { .. }
            | CtmError::Parse(_) => CliError::Data(msg),
            CtmError::Size(_) | CtmError::Structure(_) | CtmError::Margin(_) | CtmError::Calibration { .. } => {
                CliError::Config(msg)
            }
            CtmError::Solve(_) | CtmError::NonFinite { .. } | CtmError::Tail { .. } | CtmError::Monotonicity { .. } => {
                CliError::Numeric(msg)
            }
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<CtmError> for CliError {
    fn from(e: CtmError) -> Self {
        CliError::from_core(e)
    }
}
