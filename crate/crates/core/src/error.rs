//! Error taxonomy. Every error belongs to one of three user-facing
//! categories, which the CLI maps to exit codes: configuration problems
//! (2), data problems (3), and training failures (4).

use std::path::Path;

use thiserror::Error;

pub type CoreResult<T> = Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad or inconsistent configuration (unknown keys, invalid ranges,
    /// missing required paths). Exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Unreadable, malformed, or inconsistent data. Exit code 3.
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure while touching data or artifacts. Exit code 3.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training-time failure (divergence, inconsistent checkpoint). Exit
    /// code 4.
    #[error("training error: {0}")]
    Train(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data/io, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } => 3,
            PipelineError::Train(_) => 4,
        }
    }

    /// Prefix the message with the pipeline stage that raised the error,
    /// keeping the category (and hence exit code). `Io` errors already name
    /// their path and are passed through unchanged.
    pub fn with_stage(self, stage: &str) -> Self {
        match self {
            PipelineError::Config(m) => PipelineError::Config(format!("{stage}: {m}")),
            PipelineError::Data(m) => PipelineError::Data(format!("{stage}: {m}")),
            PipelineError::Train(m) => PipelineError::Train(format!("{stage}: {m}")),
            io @ PipelineError::Io { .. } => io,
        }
    }
}

impl From<fundus_nn::NnError> for PipelineError {
    fn from(e: fundus_nn::NnError) -> Self {
        match e {
            fundus_nn::NnError::CheckpointIo { path, source } => PipelineError::Io { path, source },
            other => PipelineError::Data(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 3);
        assert_eq!(
            PipelineError::io(Path::new("/tmp/x"), std::io::Error::other("boom")).exit_code(),
            3
        );
        assert_eq!(PipelineError::Train("x".into()).exit_code(), 4);
    }
}
