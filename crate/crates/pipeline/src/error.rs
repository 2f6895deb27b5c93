use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("no subjects to process in {0}")]
    EmptyManifest(PathBuf),

    #[error("{} output file(s) already exist; pass --overwrite to replace them:\n  {}", .0.len(), list(.0))]
    OutputCollision(Vec<PathBuf>),

    #[error("no matching subject stems; predictions: [{}], ground truth: [{}]", .pred.join(", "), .gt.join(", "))]
    NoMatchingStems { pred: Vec<String>, gt: Vec<String> },

    #[error("no sidecar files found under {0}")]
    NoSidecars(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("processing panicked: {0}")]
    Panicked(String),

    #[error(transparent)]
    Core(#[from] vessel_core::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

fn list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  ")
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
