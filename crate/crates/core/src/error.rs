use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation received inconsistent dimensions.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid model/training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem-level failure, tagged with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unreadable or unsupported image file.
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },

    /// Dataset-level problem (missing directories, mismatched stems, ...).
    #[error("data error: {0}")]
    Data(String),

    /// NaN/Inf guard tripped; `term` names the offending quantity.
    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    /// Malformed serialized file (bad magic, truncation, wrong version).
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Trailing checksum did not match the file contents.
    #[error("{path}: checksum mismatch (file corrupted)")]
    Corrupt { path: PathBuf },

    /// Weight/checkpoint payload does not match the target model spec.
    #[error("incompatible specs; differing fields: {}", fields.join(", "))]
    Incompatible { fields: Vec<String> },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
