//! Error type shared across the crate, with a stable mapping to process exit
//! codes: contract violations exit 2, I/O and serialization problems exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch in a tensor operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A configuration or API contract was violated (bad stride, empty input,
    /// incompatible checkpoint config, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A requested anticipation time falls outside the evaluable range.
    #[error("anticipation time {requested:.4}s outside evaluable range [{min:.4}, {max:.4}]s")]
    TimeRange { requested: f64, min: f64, max: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss at epoch {epoch} (stage {stage})")]
    Diverged { epoch: usize, stage: u8 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON/JSONL/CSV content.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    /// Checkpoint or dataset format version not understood.
    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
}

impl Error {
    /// Exit code for the CLI: 2 for contract violations, 3 for I/O trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. }
            | Error::Contract(_)
            | Error::TimeRange { .. }
            | Error::Diverged { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Version { .. } => 3,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
