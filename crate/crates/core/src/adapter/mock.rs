use serde_json::{json, Value};

use super::{AdapterError, Backend, GenerationRequest, GenerationResult, Generator, Task};

/// Deterministic template backend. Output depends only on the request content.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn call(&self, request: &GenerationRequest) -> Result<GenerationResult, AdapterError> {
        let inputs = &request.inputs;
        let (text, fields) = match request.task {
            Task::Narrative => (narrative_text(inputs), json!({"channel": inputs["channel"]})),
            Task::Question => (question_text(inputs), json!({"slot": inputs["slot"]})),
            Task::Recommendation => (recommendation_text(inputs), json!({"tier": inputs["tier"]})),
        };
        Ok(GenerationResult { text, fields, generator: Generator::Mock, degraded: false, latency_ms: 0 })
    }
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(0.0)
}

fn narrative_text(inputs: &Value) -> String {
    let unit = inputs["unit"].as_str().unwrap_or("");
    let mut text = format!(
        "{}: mean {:.1} {unit}, median {:.1}, range {:.1}-{:.1} {unit} over {} samples ({:.0} s)",
        inputs["channel"].as_str().unwrap_or("signal"),
        num(inputs, "mean"),
        num(inputs, "median"),
        num(inputs, "min"),
        num(inputs, "max"),
        num(inputs, "sample_count"),
        num(inputs, "duration_seconds"),
    );
    for feature in inputs["features"].as_array().into_iter().flatten() {
        match feature["kind"].as_str() {
            Some("trend") => text.push_str(&format!(
                "; trend {} ({:+.4} {unit}/s)",
                feature["direction"].as_str().unwrap_or("?"),
                num(feature, "slope"),
            )),
            Some("excursion") => text.push_str(&format!(
                "; {} soft bound {:.1} {unit} (extreme {:.1})",
                feature["side"].as_str().unwrap_or("?"),
                num(feature, "bound"),
                num(feature, "extreme"),
            )),
            _ => {}
        }
    }
    text
}

fn question_text(inputs: &Value) -> String {
    let template = inputs["template"].as_str().unwrap_or_default();
    if inputs["clarify"].as_bool().unwrap_or(false) {
        format!("Sorry, I could not understand that answer. {template}")
    } else {
        template.to_string()
    }
}

fn recommendation_text(inputs: &Value) -> String {
    let opening = match inputs["tier"].as_str().unwrap_or_default() {
        "urgent_care" => "Please seek urgent care now.",
        "contact_clinician" => "Please contact your care team today.",
        "schedule_appointment" => "Please schedule a follow-up appointment.",
        _ => "No urgent action is needed.",
    };
    let mut text = opening.to_string();
    for point in inputs["points"].as_array().into_iter().flatten() {
        if let Some(p) = point.as_str() {
            text.push(' ');
            text.push_str(p);
        }
    }
    text
}
