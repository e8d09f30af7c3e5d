//! Unified memory: an append-only event log per patient, a rolling
//! short-term snapshot, long-term facts with provenance, context bundles,
//! and retraining-job descriptors for stable patterns.

mod context;
mod facts;
mod patterns;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::ConfigError;
use crate::ids::{EventId, FactId, JobId, PatientId};
use crate::time::{Span, Timestamp};

pub use context::{relevant_categories, ContextBundle, EpisodicEntry};
pub use facts::{Confirmation, LongTermFact, PendingCandidate};
pub use patterns::{JobScope, RetrainJobDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SegmentClosed,
    Trigger,
    SessionTurn,
    SessionOutcome,
    Response,
    Verdict,
    Report,
    Digest,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::SegmentClosed => "segment_closed",
            EventKind::Trigger => "trigger",
            EventKind::SessionTurn => "session_turn",
            EventKind::SessionOutcome => "session_outcome",
            EventKind::Response => "response",
            EventKind::Verdict => "verdict",
            EventKind::Report => "report",
            EventKind::Digest => "digest",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactCategory {
    Condition,
    Medication,
    BaselinePattern,
    AdherencePattern,
    Preference,
}

impl FactCategory {
    pub fn name(self) -> &'static str {
        match self {
            FactCategory::Condition => "condition",
            FactCategory::Medication => "medication",
            FactCategory::BaselinePattern => "baseline_pattern",
            FactCategory::AdherencePattern => "adherence_pattern",
            FactCategory::Preference => "preference",
        }
    }
}

/// A structured assertion about a patient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub category: FactCategory,
    pub subject: String,
    pub value: String,
}

impl Statement {
    pub fn new(category: FactCategory, subject: impl Into<String>, value: impl Into<String>) -> Self {
        Self { category, subject: subject.into(), value: value.into() }
    }

    pub fn text(&self) -> String {
        format!("{}: {}", self.subject, self.value)
    }
}

/// Payload key under which an event lists statements it observed; each
/// occurrence counts toward recurrence-based promotion.
pub const OBSERVED_KEY: &str = "statements";
/// Payload key under which a response lists statements that a clinician
/// approval confirms.
pub const ASSERTED_KEY: &str = "assertions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub event_id: EventId,
    pub patient_id: PatientId,
    pub kind: EventKind,
    pub occurred_at: Timestamp,
    pub payload: Value,
}

impl MemoryEvent {
    pub fn observed(&self) -> Vec<Statement> {
        statements_at(&self.payload, OBSERVED_KEY)
    }

    pub fn asserted(&self) -> Vec<Statement> {
        statements_at(&self.payload, ASSERTED_KEY)
    }

    /// One-line description used in episodic context.
    pub fn summary(&self) -> String {
        self.payload
            .get("summary")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| self.kind.name().replace('_', " "))
    }
}

fn statements_at(payload: &Value, key: &str) -> Vec<Statement> {
    payload.get(key).cloned().and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub patient_id: PatientId,
    pub window_hours: f64,
    pub events: Vec<MemoryEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub snapshot_window_hours: f64,
    pub recurrence_k: usize,
    pub episodic_m: usize,
    pub stability_window_days: f64,
    pub stability_min_facts: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            snapshot_window_hours: 72.0,
            recurrence_k: 3,
            episodic_m: 20,
            stability_window_days: 30.0,
            stability_min_facts: 20,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.snapshot_window_hours > 0.0) {
            return Err(ConfigError::new("memory.snapshot_window_hours", "must be positive"));
        }
        if self.recurrence_k == 0 {
            return Err(ConfigError::new("memory.recurrence_k", "must be at least 1"));
        }
        if !(self.stability_window_days > 0.0) {
            return Err(ConfigError::new("memory.stability_window_days", "must be positive"));
        }
        if self.stability_min_facts == 0 {
            return Err(ConfigError::new("memory.stability_min_facts", "must be at least 1"));
        }
        Ok(())
    }

    pub fn snapshot_window(&self) -> Span {
        Span::from_secs_f64(self.snapshot_window_hours * 3600.0)
    }

    pub fn stability_window(&self) -> Span {
        Span::from_secs_f64(self.stability_window_days * 86_400.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("event id {0} already stored")]
    DuplicateEventId(EventId),
    #[error("provenance event {0} is not stored")]
    UnresolvableProvenance(EventId),
    #[error("statement lacks clinician confirmation and has {count} of {needed} recurrences")]
    InsufficientEvidence { count: usize, needed: usize },
}

/// Where an event landed in its patient's log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position(pub usize);

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    config: MemoryConfig,
    logs: BTreeMap<PatientId, Vec<MemoryEvent>>,
    index: BTreeMap<EventId, (PatientId, usize)>,
    event_counters: BTreeMap<PatientId, u64>,
    facts: BTreeMap<FactId, LongTermFact>,
    fact_counters: BTreeMap<PatientId, u64>,
    staging: BTreeMap<(PatientId, Statement), PendingCandidate>,
    emitted_sets: BTreeSet<Vec<FactId>>,
    descriptors: Vec<RetrainJobDescriptor>,
    job_counters: BTreeMap<PatientId, u64>,
}

impl MemoryStore {
    pub fn new(config: MemoryConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    /// Allocates the next event id for a patient: `evt-<patient>-<seq>`.
    pub fn next_event_id(&mut self, patient: &PatientId) -> EventId {
        let n = self.event_counters.entry(patient.clone()).or_insert(0);
        *n += 1;
        EventId::new(format!("evt-{patient}-{:08}", *n))
    }

    /// Builds and appends an event with a fresh id. Observed statements
    /// are staged and promoted once they recur often enough.
    pub fn record(
        &mut self,
        patient: &PatientId,
        kind: EventKind,
        occurred_at: Timestamp,
        payload: Value,
    ) -> MemoryEvent {
        let event = MemoryEvent {
            event_id: self.next_event_id(patient),
            patient_id: patient.clone(),
            kind,
            occurred_at,
            payload,
        };
        self.append_event(event.clone()).expect("fresh ids are unique");
        event
    }

    pub fn append_event(&mut self, event: MemoryEvent) -> Result<Position, MemoryError> {
        if self.index.contains_key(&event.event_id) {
            return Err(MemoryError::DuplicateEventId(event.event_id));
        }
        let log = self.logs.entry(event.patient_id.clone()).or_default();
        let position = log.len();
        self.index.insert(event.event_id.clone(), (event.patient_id.clone(), position));
        let observed = event.observed();
        let (patient, event_id, at) = (event.patient_id.clone(), event.event_id.clone(), event.occurred_at);
        log.push(event);
        for statement in observed {
            self.stage(&patient, statement, &event_id, at);
        }
        Ok(Position(position))
    }

    pub fn event(&self, id: &EventId) -> Option<&MemoryEvent> {
        let (patient, pos) = self.index.get(id)?;
        self.logs.get(patient).and_then(|log| log.get(*pos))
    }

    pub fn events(&self, patient: &PatientId) -> &[MemoryEvent] {
        self.logs.get(patient).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientId> {
        self.logs.keys()
    }

    pub fn event_count(&self) -> usize {
        self.index.len()
    }

    /// Events with `occurred_at` in `(now - window, now]`, ordered by
    /// `(occurred_at, event_id)`.
    pub fn read_snapshot(&self, patient: &PatientId, now: Timestamp) -> Snapshot {
        let from = now - self.config.snapshot_window();
        let mut events: Vec<MemoryEvent> = self
            .events(patient)
            .iter()
            .filter(|e| e.occurred_at > from && e.occurred_at <= now)
            .cloned()
            .collect();
        events.sort_by(|a, b| (a.occurred_at, &a.event_id).cmp(&(b.occurred_at, &b.event_id)));
        Snapshot { patient_id: patient.clone(), window_hours: self.config.snapshot_window_hours, events }
    }

    pub fn facts(&self) -> impl Iterator<Item = &LongTermFact> {
        self.facts.values()
    }

    pub fn fact(&self, id: &FactId) -> Option<&LongTermFact> {
        self.facts.get(id)
    }

    pub fn facts_for(&self, patient: &PatientId) -> impl Iterator<Item = &LongTermFact> {
        let patient = patient.clone();
        self.facts.values().filter(move |f| f.patient_id == patient)
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingCandidate> {
        self.staging.values()
    }

    pub fn descriptors(&self) -> &[RetrainJobDescriptor] {
        &self.descriptors
    }

    fn next_fact_id(&mut self, patient: &PatientId) -> FactId {
        let n = self.fact_counters.entry(patient.clone()).or_insert(0);
        *n += 1;
        FactId::new(format!("fact-{patient}-{:04}", *n))
    }

    fn next_job_id(&mut self, patient: &PatientId) -> JobId {
        let n = self.job_counters.entry(patient.clone()).or_insert(0);
        *n += 1;
        JobId::new(format!("job-{patient}-{:04}", *n))
    }
}
