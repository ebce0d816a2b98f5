use std::path::PathBuf;

/// Errors produced anywhere in the decoding controller or the benchmark harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("provider unavailable after {attempts} attempt(s): {detail}")]
    ProviderUnavailable { attempts: u32, detail: String },

    #[error("scenario has no entry for context ending in {tail:?}")]
    ScenarioMiss { tail: String },

    #[error("backend capability missing: {0}")]
    CapabilityMissing(String),

    #[error("degenerate candidate: {0}")]
    DegenerateCandidate(String),

    #[error("all {0} sampled candidates were degenerate")]
    AllDegenerate(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate task_id {task_id:?} (line {line})")]
    DuplicateTask { task_id: String, line: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("execution runner unavailable: {0}")]
    RunnerUnavailable(String),

    #[error("runner protocol error: {0}")]
    RunnerProtocol(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
