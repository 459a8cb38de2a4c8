//! Benchmark harness: scenario files, closed-loop trials, metrics and result files.

use std::fmt;
use std::path::Path;

pub mod metrics;
pub mod scenario;
pub mod suite;
pub mod trace;
pub mod trial;

pub use metrics::{compute_metrics, normalize_metrics, MetricInputs, SafetyAudit, TrialMetrics};
pub use scenario::Scenario;
pub use suite::{recompute, run_suite, SuiteOptions, SuiteReport};
pub use trial::{run_trial, Method, TrialOutcome, TrialSpec, WallClock};

#[derive(Debug)]
pub enum BenchError {
    Io { path: String, source: std::io::Error },
    Json { path: String, source: serde_json::Error },
    Csv { path: String, source: csv::Error },
    Core(cadp_core::Error),
    /// Listed start `i` is outside the safe set.
    UnsafeStart(usize),
    Config(String),
    EmptyLog,
    Pool(String),
}

impl BenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        BenchError::Csv {
            path: path.display().to_string(),
            source,
        }
    }
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Io { path, source } => write!(f, "{path}: {source}"),
            BenchError::Json { path, source } => write!(f, "{path}: {source}"),
            BenchError::Csv { path, source } => write!(f, "{path}: {source}"),
            BenchError::Core(e) => write!(f, "{e}"),
            BenchError::UnsafeStart(i) => write!(f, "start {i} is outside the safe set"),
            BenchError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            BenchError::EmptyLog => write!(f, "trial log is empty"),
            BenchError::Pool(msg) => write!(f, "worker pool: {msg}"),
        }
    }
}

impl std::error::Error for BenchError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            BenchError::Io { source, .. } => Some(source),
            BenchError::Json { source, .. } => Some(source),
            BenchError::Csv { source, .. } => Some(source),
            BenchError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<cadp_core::Error> for BenchError {
    fn from(e: cadp_core::Error) -> Self {
        BenchError::Core(e)
    }
}
