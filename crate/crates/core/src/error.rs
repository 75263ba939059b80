use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is rank deficient: pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    #[error("cache was built for a different measurement operator")]
    CacheMismatch,

    #[error("cache size guard: m = {m} exceeds the configured cap {cap}")]
    CapExceeded { m: usize, cap: usize },

    #[error("{solver} diverged at iteration {iteration}: non-finite iterate")]
    Divergence { solver: &'static str, iteration: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
