use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::Value;

use super::{AdapterError, Backend, GenerationRequest, GenerationResult, Generator};

/// HTTP client for a remote inference service speaking the `/v1/generate`
/// protocol: one canonical JSON object per POST, `{text, fields}` back.
pub struct RemoteBackend {
    url: String,
    agent: ureq::Agent,
    permits: Semaphore,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    fields: Value,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout_seconds: f64, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/v1/generate", endpoint.trim_end_matches('/')),
            agent,
            permits: Semaphore::new(max_in_flight),
        }
    }

    fn attempt(&self, body: &str) -> Result<WireResponse, Attempt> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Attempt::Status(status.as_u16()));
        }
        let text = response.body_mut().read_to_string().map_err(|e| Attempt::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Attempt::Malformed(e.to_string()))
    }
}

enum Attempt {
    Transport(String),
    Status(u16),
    Malformed(String),
}

impl Backend for RemoteBackend {
    fn call(&self, request: &GenerationRequest) -> Result<GenerationResult, AdapterError> {
        let _permit = self.permits.acquire();
        let body = request.wire_body();
        let started = Instant::now();
        // one retry, and only for transport failures
        let mut outcome = self.attempt(&body);
        if matches!(outcome, Err(Attempt::Transport(_))) {
            outcome = self.attempt(&body);
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(wire) => Ok(GenerationResult {
                text: wire.text,
                fields: wire.fields,
                generator: Generator::Remote,
                degraded: false,
                latency_ms,
            }),
            Err(Attempt::Transport(e)) => Err(AdapterError::Unavailable(e)),
            Err(Attempt::Status(code)) => Err(AdapterError::Unavailable(format!("HTTP {code}"))),
            Err(Attempt::Malformed(e)) => Err(AdapterError::InvalidOutput(e)),
        }
    }
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { available: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().expect("semaphore poisoned");
        while *available == 0 {
            available = self.freed.wait(available).expect("semaphore poisoned");
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}
