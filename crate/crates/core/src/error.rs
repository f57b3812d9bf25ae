use std::path::PathBuf;

use thiserror::Error;

/// Problems with a configuration file or a set of overrides.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error at line {line}, column {column}, key `{path}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config error, key `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label id {id} out of range for {labels} labels")]
    LabelOutOfRange { id: i64, labels: usize },
    #[error("agent database is empty")]
    EmptyDatabase,
    #[error("mixture pseudo-counts sum to zero")]
    ZeroPseudoCounts,
    #[error("invalid backend parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },
    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("unexpected response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BackendError {
    /// Transport failures may succeed on a later attempt; everything else is deterministic.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("non-finite embedding component for agent {agent}")]
    NonFiniteEmbedding { agent: usize },
    #[error("embedding dimension mismatch for agent {agent}: expected {expected}, got {got}")]
    DimensionMismatch {
        agent: usize,
        expected: usize,
        got: usize,
    },
    #[error("k = {k} out of range for n = {n} (need 1 <= k <= n-1)")]
    KOutOfRange { k: usize, n: usize },
    #[error("agent index {index} out of range for n = {n}")]
    AgentOutOfRange { index: usize, n: usize },
    #[error("tick {tick}, agent {agent}: {source}")]
    Backend {
        tick: usize,
        agent: usize,
        #[source]
        source: BackendError,
    },
    #[error("backend initialization failed: {0}")]
    Init(#[source] BackendError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl EngineError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EngineError::Backend { source, .. } | EngineError::Init(source) => {
                source.is_retryable()
            }
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length: {prev} vs {curr}")]
    LengthMismatch { prev: usize, curr: usize },
    #[error("population size is zero")]
    ZeroPopulation,
    #[error("silo counts sum to {sum}, expected {n}")]
    CountMismatch { sum: usize, n: usize },
    #[error("trajectory has {got} snapshots, classification window needs at least {needed}")]
    TrajectoryTooShort { needed: usize, got: usize },
    #[error("invalid classifier parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("no rows to aggregate")]
    NoRows,
}
