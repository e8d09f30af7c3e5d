//! The single boundary to language-model text generation.
//!
//! The engine decides structure (tiers, targeted slots, visibility); the
//! adapter only phrases. Every backend result is schema-validated before it
//! leaves this module, and any remote failure degrades to the deterministic
//! mock.

mod mock;
mod remote;
mod schema;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::config::ConfigError;

pub use mock::MockBackend;
pub use remote::RemoteBackend;
pub use schema::{validate_output, validate_request};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Narrative,
    Question,
    Recommendation,
}

impl Task {
    pub fn schema_id(self) -> &'static str {
        match self {
            Task::Narrative => "narrative.v1",
            Task::Question => "question.v1",
            Task::Recommendation => "recommendation.v1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task: Task,
    pub schema_id: String,
    /// Structured inputs, already restricted to what the target audience may see.
    pub inputs: Value,
    pub seed: u64,
    /// SHA-256 over the canonical wire body; identical content gives an
    /// identical digest in any process.
    pub request_digest: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    task: Task,
    schema_id: &'a str,
    inputs: &'a Value,
    seed: u64,
}

impl GenerationRequest {
    pub fn new(task: Task, inputs: Value, seed: u64) -> Self {
        let schema_id = task.schema_id().to_string();
        let request_digest =
            canonical::digest_of(&WireRequest { task, schema_id: &schema_id, inputs: &inputs, seed });
        Self { task, schema_id, inputs, seed, request_digest }
    }

    /// The exact body POSTed to `/v1/generate`.
    pub fn wire_body(&self) -> String {
        canonical::to_canonical_string(&WireRequest {
            task: self.task,
            schema_id: &self.schema_id,
            inputs: &self.inputs,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub fields: Value,
    pub generator: Generator,
    pub degraded: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("request violates schema at {field}: {message}")]
    SchemaViolation { field: String, message: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend output invalid: {0}")]
    InvalidOutput(String),
}

pub trait Backend: Send + Sync {
    fn call(&self, request: &GenerationRequest) -> Result<GenerationResult, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub backend: BackendChoice,
    /// Base URL of the remote inference service, e.g. `http://127.0.0.1:8088`.
    pub endpoint: Option<String>,
    pub timeout_seconds: f64,
    pub max_in_flight: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { backend: BackendChoice::Mock, endpoint: None, timeout_seconds: 10.0, max_in_flight: 8 }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backend == BackendChoice::Remote && self.endpoint.is_none() {
            return Err(ConfigError::new("adapter.endpoint", "required for the remote backend"));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(ConfigError::new("adapter.timeout_seconds", "must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::new("adapter.max_in_flight", "must be at least 1"));
        }
        Ok(())
    }
}

/// Validating front for a backend, with mock fallback.
pub struct Adapter {
    remote: Option<Box<dyn Backend>>,
    mock: MockBackend,
}

impl std::fmt::Debug for Adapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapter").field("remote", &self.remote.is_some()).finish()
    }
}

impl Default for Adapter {
    fn default() -> Self {
        Self::mock()
    }
}

impl Adapter {
    pub fn mock() -> Self {
        Self { remote: None, mock: MockBackend }
    }

    pub fn with_backend(backend: Box<dyn Backend>) -> Self {
        Self { remote: Some(backend), mock: MockBackend }
    }

    pub fn from_config(config: &AdapterConfig) -> Self {
        match (config.backend, &config.endpoint) {
            (BackendChoice::Remote, Some(endpoint)) => Self::with_backend(Box::new(RemoteBackend::new(
                endpoint,
                config.timeout_seconds,
                config.max_in_flight,
            ))),
            _ => Self::mock(),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.remote.is_none()
    }

    /// Generates text for `request`.
    ///
    /// Only a malformed request is an error. Remote transport failures and
    /// invalid remote output both yield the mock result with `degraded` set.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, AdapterError> {
        validate_request(request)?;
        let Some(remote) = &self.remote else {
            return self.mock.call(request);
        };
        let outcome =
            remote.call(request).and_then(|result| validate_output(request, &result).map(|()| result));
        match outcome {
            Ok(result) => Ok(result),
            Err(err) => {
                tracing::warn!(task = ?request.task, error = %err, "remote generation failed; using mock");
                let mut fallback = self.mock.call(request)?;
                fallback.degraded = true;
                Ok(fallback)
            }
        }
    }
}
