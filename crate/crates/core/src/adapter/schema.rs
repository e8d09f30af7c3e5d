use serde_json::Value;

use super::{AdapterError, GenerationRequest, GenerationResult, Task};

#[derive(Clone, Copy)]
enum Kind {
    Str,
    Num,
    Bool,
    Array,
}

impl Kind {
    fn matches(self, v: &Value) -> bool {
        match self {
            Kind::Str => v.is_string(),
            Kind::Num => v.is_number(),
            Kind::Bool => v.is_boolean(),
            Kind::Array => v.is_array(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Str => "string",
            Kind::Num => "number",
            Kind::Bool => "boolean",
            Kind::Array => "array",
        }
    }
}

fn input_fields(task: Task) -> &'static [(&'static str, Kind)] {
    match task {
        Task::Narrative => &[
            ("channel", Kind::Str),
            ("unit", Kind::Str),
            ("mean", Kind::Num),
            ("min", Kind::Num),
            ("max", Kind::Num),
            ("median", Kind::Num),
            ("slope", Kind::Num),
            ("sample_count", Kind::Num),
            ("duration_seconds", Kind::Num),
            ("features", Kind::Array),
        ],
        Task::Question => {
            &[("track", Kind::Str), ("slot", Kind::Str), ("clarify", Kind::Bool), ("template", Kind::Str)]
        }
        Task::Recommendation => &[("track", Kind::Str), ("tier", Kind::Str), ("points", Kind::Array)],
    }
}

/// Output fields every result must carry, each echoing the named input so the
/// engine can check the backend stayed on the requested target.
fn echoed_fields(task: Task) -> &'static [&'static str] {
    match task {
        Task::Narrative => &["channel"],
        Task::Question => &["slot"],
        Task::Recommendation => &["tier"],
    }
}

pub fn validate_request(request: &GenerationRequest) -> Result<(), AdapterError> {
    let violation =
        |field: &str, message: String| AdapterError::SchemaViolation { field: field.to_string(), message };
    if request.schema_id != request.task.schema_id() {
        return Err(violation("schema_id", format!("expected {} for task", request.task.schema_id())));
    }
    let Some(inputs) = request.inputs.as_object() else {
        return Err(violation("inputs", "must be an object".into()));
    };
    for (name, kind) in input_fields(request.task) {
        match inputs.get(*name) {
            Some(v) if kind.matches(v) => {}
            Some(_) => return Err(violation(name, format!("must be a {}", kind.name()))),
            None => return Err(violation(name, "missing".into())),
        }
    }
    Ok(())
}

pub fn validate_output(request: &GenerationRequest, result: &GenerationResult) -> Result<(), AdapterError> {
    if result.text.trim().is_empty() {
        return Err(AdapterError::InvalidOutput("empty text".into()));
    }
    let Some(fields) = result.fields.as_object() else {
        return Err(AdapterError::InvalidOutput("fields must be an object".into()));
    };
    for name in echoed_fields(request.task) {
        let got = fields.get(*name);
        let want = request.inputs.get(*name);
        match got {
            None => return Err(AdapterError::InvalidOutput(format!("missing field {name}"))),
            Some(v) if Some(v) != want => {
                return Err(AdapterError::InvalidOutput(format!("field {name} does not match request")))
            }
            Some(_) => {}
        }
    }
    Ok(())
}
