//! Workspace-wide error type. Every variant names the subsystem it came
//! from so CLI output can point at the failing module.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("numerics: {0}")]
    Numerics(String),
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("heads: {0}")]
    Heads(String),
    #[error("multitask: {0}")]
    Multitask(String),
    #[error("trainer: {0}")]
    Trainer(String),
    #[error("baseline: {0}")]
    Baseline(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("trainer: container version mismatch (found {found}, expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("trainer: container checksum mismatch, file is corrupt")]
    ChecksumMismatch,
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
