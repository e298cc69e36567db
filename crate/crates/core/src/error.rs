//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("rejected entry {source_id}: transcript empty after canonicalization")]
    EmptyTranscript { source_id: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("checkpoint stage is {got}, expected one of {expected}")]
    Stage { expected: String, got: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("missing {what}: {path} (run the `{stage}` stage first)")]
    MissingArtifact {
        what: String,
        stage: String,
        path: PathBuf,
    },

    #[error("lineage mismatch: {0}")]
    Lineage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact { .. } | Error::Lineage(_) => 2,
            Error::Diverged(_) => 3,
            _ => 1,
        }
    }
}
