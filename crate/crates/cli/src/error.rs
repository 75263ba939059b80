use std::fmt;

use robust_phase::Error;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Solver(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Solver(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Solver(_) => "solver",
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Io(m) | Self::Solver(m) => m,
        }
    }

    /// One-line `key=value` form written to stderr on failure.
    pub fn machine_line(&self) -> String {
        format!(
            "error kind={} code={} message={}",
            self.kind(),
            self.code(),
            serde_json::to_string(self.message()).unwrap_or_default()
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Image { .. } => Self::Io(e.to_string()),
            Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::NotPowerOfTwo(_)
            | Error::Format(_) => Self::Config(e.to_string()),
            Error::Singular { .. }
            | Error::CacheMismatch
            | Error::CapExceeded { .. }
            | Error::Divergence { .. }
            | Error::Degenerate(_) => Self::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
