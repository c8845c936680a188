use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("transition matrix is not ergodic (power iteration did not converge after {iterations} iterations, spread {spread:.3e})")]
    NonErgodic { iterations: usize, spread: f64 },

    #[error("eigendecomposition did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e}, Frobenius norm {frobenius:.3e})")]
    EigenNonConvergence {
        sweeps: usize,
        off_norm: f64,
        frobenius: f64,
    },

    #[error(
        "SMO did not converge after {iterations} iterations (max KKT violation {violation:.3e})"
    )]
    SvmConvergence { iterations: usize, violation: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("split leakage: {0}")]
    Leakage(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_) | Error::Contract(_) | Error::DimensionMismatch { .. } => {
                ErrorKind::Usage
            }
            Error::NonErgodic { .. }
            | Error::EigenNonConvergence { .. }
            | Error::SvmConvergence { .. }
            | Error::NonFinite(_) => ErrorKind::Numerical,
            Error::Sample { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
