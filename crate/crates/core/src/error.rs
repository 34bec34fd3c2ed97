use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("record {ppgr_id} has {rows} rows, expected 60")]
    BadRowCount { ppgr_id: String, rows: usize },
    #[error("non-numeric cell `{value}` in column `{column}` at line {line}")]
    NonNumericCell {
        column: String,
        line: usize,
        value: String,
    },
    #[error("negative covariate {value} in column `{column}` at line {line}")]
    NegativeCovariate {
        column: String,
        line: usize,
        value: f64,
    },
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error("non-finite ODE state")]
    NonFiniteState,
    #[error("numerical blowup: |G| = {0:e} exceeded 1e6")]
    NumericalBlowup(f64),
    #[error("numerical blowup while simulating record {0}")]
    RecordBlowup(String),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("value {value} is outside the open interval ({lo}, {hi})")]
    OutOfInterval { value: f64, lo: f64, hi: f64 },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),
    #[error("degenerate record {0}")]
    DegenerateRecord(String),
    #[error("record {0} has no glucose observations")]
    AllMissing(String),
    #[error("degenerate clustering input: {0}")]
    DegenerateInput(String),
    #[error("label length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no diagnosis label for person {0}")]
    MissingLabel(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Input-validation failures map to CLI exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::BadRowCount { .. }
                | Error::NonNumericCell { .. }
                | Error::NegativeCovariate { .. }
                | Error::Malformed(_)
                | Error::InvalidSpec(_)
                | Error::OutOfInterval { .. }
                | Error::DegenerateRecord(_)
                | Error::AllMissing(_)
                | Error::DegenerateInput(_)
                | Error::LengthMismatch(..)
                | Error::MissingLabel(_)
                | Error::Config(_)
        )
    }
}
