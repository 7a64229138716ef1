//! Error type shared by every stage of the learner.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CltsError>;

#[derive(Debug, Error)]
pub enum CltsError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in parameter block `{block}`")]
    Numeric { block: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("specification error: {0}")]
    Specification(String),

    #[error("ingestion error for {}: {message}", path.display())]
    Ingestion { path: PathBuf, message: String },

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("lookup initialization error: {0}")]
    Initialization(String),

    #[error("captioning error: {0}")]
    Captioning(String),

    #[error("generation error for caption {caption:?}: {message}")]
    Generation { caption: String, message: String },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("task {task}, stage `{stage}`: {source}")]
    Stage {
        task: usize,
        stage: &'static str,
        #[source]
        source: Box<CltsError>,
    },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CltsError {
    pub fn dimension(context: impl Into<String>, expected: usize, got: usize) -> Self {
        CltsError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CltsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the task index and pipeline stage it came from.
    pub fn at_stage(self, task: usize, stage: &'static str) -> Self {
        CltsError::Stage {
            task,
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        match self {
            CltsError::Config(_) | CltsError::Specification(_) => true,
            CltsError::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
