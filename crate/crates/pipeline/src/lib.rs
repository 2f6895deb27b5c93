//! Batch orchestration around `vessel-core`: manifest-driven preprocessing,
//! metric and loss evaluation on NIfTI files, and cropping-rate reports.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod manifest;
pub mod preprocess;
pub mod report;

pub use config::{ConfigOverrides, PipelineConfig, Threads};
pub use error::{PipelineError, Result};
pub use evaluate::{run_losses, run_metrics, LossInputs, MetricsOptions, MetricsRun};
pub use manifest::{SubjectEntry, SubjectManifest};
pub use preprocess::{run_preprocess, RunReport, SubjectRecord, SubjectStatus};
pub use report::{run_report, CrSummary};
