use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or volume extents do not line up.
    #[error("{op}: dimension mismatch{}: {detail}", axis.map(|a| format!(" on axis {a}")).unwrap_or_default())]
    Dimension {
        op: &'static str,
        axis: Option<usize>,
        detail: String,
    },

    /// A caller-supplied argument is outside the accepted range.
    #[error("{op}: invalid argument: {detail}")]
    Argument { op: &'static str, detail: String },

    /// A value lies outside the mathematical domain of the operation.
    #[error("{op}: value out of domain: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A NaN or infinity appeared while checked mode was enabled.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// A file does not follow its binary layout.
    #[error("{path}: malformed file at byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    /// A configuration document could not be accepted.
    #[error("config: {0}")]
    Config(String),

    /// Training diverged. Carries the last finite loss report as JSON.
    #[error("training diverged at step {step} ({reason}); last finite report: {last_report}")]
    Diverged { step: u64, reason: String, last_report: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, axis: Option<usize>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Argument {
            op,
            detail: detail.into(),
        }
    }
}
