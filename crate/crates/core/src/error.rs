use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GmtError>;

#[derive(Debug, Error)]
pub enum GmtError {
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e}, det {det:.6})")]
    NotARotation { residual: f64, det: f64 },

    #[error("no scene points within {radius} m of the trajectory")]
    EmptyRegion { radius: f64 },
    #[error("sample count {requested} out of range 1..={available}")]
    BadCount { requested: usize, available: usize },
    #[error("point cloud carries no feature matrix")]
    MissingFeatures,
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("trajectory history has no valid frames")]
    EmptyHistory,
    #[error("trajectory has no valid future frames")]
    EmptyFuture,
    #[error("description text is empty")]
    EmptyDescription,
    #[error("every key token is masked")]
    AllTokensMasked,
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("trajectory too short: {valid} valid frames, need at least {needed}")]
    TooShort { valid: usize, needed: usize },
    #[error("need at least {needed} samples for a non-empty test split, got {got}")]
    TooFewSamples { got: usize, needed: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty sequence")]
    EmptySequence,
    #[error("no step pair with non-zero motion in both trajectories")]
    NoMotion,

    #[error("no collision-free path after {attempts} attempts")]
    NoClearPath { attempts: usize },
    #[error("every frame is static after motion filtering")]
    AllStatic,
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GmtError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmtError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        GmtError::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
