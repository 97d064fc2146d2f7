//! Stream harness: ingestion, synthetic streams, fixtures, evaluation,
//! throughput benchmarks and hyperparameter sweeps for the inference engine
//! in `dbnn-core`.

pub mod bench;
pub mod cli;
pub mod eval;
pub mod fixtures;
pub mod gen;
pub mod metrics;
pub mod records;
pub mod sweep;

use dbnn_core::{EngineError, PredictorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<usize>, message: String },
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl HarnessError {
    /// Process exit code: 1 config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data { .. } | HarnessError::Schema { .. } => 2,
            HarnessError::Internal(_) => 3,
        }
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => HarnessError::Config(e.to_string()),
            EngineError::Och(dbnn_core::OchError::Config(_)) => HarnessError::Config(e.to_string()),
            EngineError::Input(_) => HarnessError::Data { line: None, message: e.to_string() },
            EngineError::Predictor(p) => p.into(),
            _ => HarnessError::Internal(e.to_string()),
        }
    }
}

impl From<PredictorError> for HarnessError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Invalid(_) => HarnessError::Config(e.to_string()),
            _ => HarnessError::Data { line: None, message: e.to_string() },
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}
