use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("zero variance on axis {axis}; cannot standardize")]
    ZeroVariance { axis: char },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty snapshot set; no valid pairs were produced")]
    EmptySnapshots,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(
        "normal equations are ill-conditioned (cond ~ {cond:.3e}) at lambda = 0; \
         pass a ridge coefficient > 0 or request the SVD solve path"
    )]
    IllConditioned { cond: f64 },

    #[error("NaN encountered in {0}")]
    NanInData(String),

    #[error("eigenvector basis is ill-conditioned (cond ~ {cond:.3e}); mode decomposition refused")]
    NonDiagonalizable { cond: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("missing prerequisite: {what}; run `{hint}` first")]
    MissingPrerequisite { what: String, hint: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParam(_) | Error::MissingPrerequisite { .. } => 2,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::EmptyDataset(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
