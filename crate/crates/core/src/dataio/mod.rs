//! File formats, experiment configuration and estimation-quality metrics.

use std::path::PathBuf;

use thiserror::Error;

mod config;
mod csvio;
mod metrics;

pub use config::{
    ConfigOverrides, ExcitationConfig, ExperimentConfig, FilterConfig, FilterKind,
    MetricThresholds, TruthConfig,
};
pub use csvio::{
    format_real, read_signal_csv, read_signal_from, read_trace_csv, read_trace_from,
    read_truth_csv, write_signal_csv, write_signal_to, write_trace_csv, write_trace_to,
    write_truth_csv, write_truth_to, SignalData, SIGNAL_HEADER_FULL, SIGNAL_HEADER_INPUT,
    TRACE_HEADER, TRACE_HEADER_WITH_ERRORS, TRUTH_HEADER,
};
pub use metrics::{
    compute_metrics, convergence_time, EstimateTrace, Metrics, ParameterMetrics, TraceRow,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: sample spacing {found:e} s deviates from {expected:e} s")]
    Spacing {
        line: u64,
        expected: f64,
        found: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
