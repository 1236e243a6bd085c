use std::path::Path;

use robust_rank::data::Role;
use robust_rank::harness::AblationMode;
use robust_rank::loss::Divergence;
use serde::{Deserialize, Serialize};

use crate::args::BackendKind;
use crate::CliError;

/// Every key the `--config` file may set. Each command reads the keys it
/// understands and ignores the rest, but unknown keys are rejected.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,

    pub levels: Option<u32>,
    pub cutoffs: Option<Vec<usize>>,
    pub roles: Option<Vec<Role>>,

    pub num_queries: Option<usize>,
    pub docs_per_query: Option<usize>,
    pub noise_scale: Option<f64>,
    pub dim: Option<usize>,
    pub synth_seed: Option<u64>,

    pub alpha: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub bottleneck: Option<usize>,
    pub holdout: Option<f64>,
    pub mode: Option<AblationMode>,
    pub divergence: Option<Divergence>,
    pub epsilon: Option<f64>,
    pub include_original_in_robust: Option<bool>,
    pub include_original_in_accuracy: Option<bool>,

    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_iters: Option<u32>,
    pub strict: Option<bool>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}

/// Parses a snake_case enum value the same way the config file does.
pub fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CliError::Usage(format!("invalid {what} `{s}`")))
}
