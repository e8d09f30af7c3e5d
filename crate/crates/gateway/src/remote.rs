//! Drives a running gateway from the simulator.
//!
//! The remote pipeline keeps a local engine as a mirror: each input is
//! applied locally first, and only inputs the mirror accepts are posted,
//! with an explicit `at`, to a gateway running the manual clock. A
//! refusal by the gateway of an input the mirror accepted means the two
//! have diverged, which stops the run.

use serde_json::{json, Value};
use vitaldx_core::adapter::Adapter;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::engine::{Applied, Engine, Input};
use vitaldx_core::simulator::{Pipeline, Refusal};
use vitaldx_core::time::Timestamp;

use crate::api::ErrorBody;

pub struct RemotePipeline {
    base: String,
    service_token: String,
    clinician_token: String,
    agent: ureq::Agent,
    mirror: Engine,
    posted: usize,
}

impl RemotePipeline {
    pub fn new(base: &str, service_token: &str, clinician_token: &str, config: EngineConfig) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        Self {
            base: base.trim_end_matches('/').to_string(),
            service_token: service_token.to_string(),
            clinician_token: clinician_token.to_string(),
            agent,
            mirror: Engine::new(config, Adapter::mock()),
            posted: 0,
        }
    }

    pub fn posted(&self) -> usize {
        self.posted
    }

    fn request(input: &Input, at: Timestamp) -> (String, Value, bool) {
        match input {
            Input::RegisterPatient { patient_id, utc_offset_minutes, plans } => (
                "/v1/patients".into(),
                json!({"patient_id": patient_id, "utc_offset_minutes": utc_offset_minutes, "plans": plans, "at": at}),
                false,
            ),
            Input::Ingest { samples } => ("/v1/ingest".into(), json!({"samples": samples, "at": at}), false),
            Input::Answer { session_id, text } => {
                (format!("/v1/sessions/{}/answer", session_id.0), json!({"text": text, "at": at}), false)
            }
            Input::Verdict { response_id, verdict, note, share_note, .. } => (
                format!("/v1/responses/{}/verdict", response_id.0),
                json!({"verdict": verdict, "note": note, "share_note": share_note, "at": at}),
                true,
            ),
            Input::Tick => ("/v1/admin/tick".into(), json!({"at": at}), false),
            Input::Flush { patient_id } => {
                ("/v1/admin/flush".into(), json!({"patient_id": patient_id, "at": at}), false)
            }
            Input::ConfirmDigest { digest_id, .. } => {
                (format!("/v1/digests/{}/confirm", digest_id.0), json!({"at": at}), true)
            }
        }
    }

    fn post(&self, path: &str, body: &Value, clinician: bool) -> Result<(), Refusal> {
        let token = if clinician { &self.clinician_token } else { &self.service_token };
        let fatal = |code: &str, message: String| Refusal { code: code.into(), message, fatal: true };
        let mut response = self
            .agent
            .post(format!("{}{}", self.base, path))
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", "application/json")
            .send(body.to_string())
            .map_err(|e| fatal("Transport", e.to_string()))?;
        if response.status().is_success() {
            return Ok(());
        }
        let text = response.body_mut().read_to_string().unwrap_or_default();
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(e) => Err(fatal(
                &e.code,
                format!("gateway refused {path} after the mirror accepted it: {}", e.message),
            )),
            Err(_) => Err(fatal("Transport", format!("{path}: HTTP {} {text}", response.status()))),
        }
    }
}

impl Pipeline for RemotePipeline {
    fn submit(&mut self, input: Input, at: Timestamp) -> Result<Applied, Refusal> {
        let applied = self.mirror.apply(&input, at)?;
        let (path, body, clinician) = Self::request(&input, at);
        self.post(&path, &body, clinician)?;
        self.posted += 1;
        Ok(applied)
    }

    fn engine(&self) -> &Engine {
        &self.mirror
    }
}
