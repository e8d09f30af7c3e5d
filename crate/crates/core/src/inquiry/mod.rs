//! Slot-driven patient Q&A opened by a trigger, bounded by a turn cap and
//! closed as soon as every required slot is filled.

mod extract;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{Adapter, AdapterError, GenerationRequest, Generator, Task};
use crate::canonical;
use crate::config::ConfigError;
use crate::ids::{FactId, PatientId, SessionId, TriggerId};
use crate::memory::{ContextBundle, FactCategory};
use crate::time::{Span, Timestamp};
use crate::triggers::{Track, TriggerEvent};

pub use extract::extract;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    SymptomPresent,
    Onset,
    Severity,
    Context,
    Adherent,
    Barriers,
    SideEffects,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::SymptomPresent => "symptom_present",
            Slot::Onset => "onset",
            Slot::Severity => "severity",
            Slot::Context => "context",
            Slot::Adherent => "adherent",
            Slot::Barriers => "barriers",
            Slot::SideEffects => "side_effects",
        }
    }

    pub fn domain(self) -> SlotDomain {
        match self {
            Slot::SymptomPresent | Slot::SideEffects => SlotDomain::YesNo,
            Slot::Adherent => SlotDomain::YesNoPartial,
            Slot::Severity => SlotDomain::Severity,
            Slot::Onset | Slot::Context | Slot::Barriers => SlotDomain::FreeText,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotDomain {
    YesNo,
    YesNoPartial,
    /// Integer 0 to 10.
    Severity,
    FreeText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Yes,
    No,
    Partial,
}

impl Choice {
    pub fn name(self) -> &'static str {
        match self {
            Choice::Yes => "yes",
            Choice::No => "no",
            Choice::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotValue {
    Choice(Choice),
    Severity(u8),
    Text(String),
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotValue::Choice(c) => f.write_str(c.name()),
            SlotValue::Severity(n) => write!(f, "{n}/10"),
            SlotValue::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotSource {
    /// Index into the session's turn list.
    Turn { turn: usize },
    /// Pre-filled from a long-term fact in the context bundle.
    Fact { fact_id: FactId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledSlot {
    pub value: SlotValue,
    pub source: SlotSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot: Slot,
    /// Question template; `{channel}` and `{topic}` are substituted.
    pub template: String,
    /// A fact of this category in the context bundle fills the slot at open.
    #[serde(default)]
    pub prefill_from: Option<FactCategory>,
}

impl SlotSpec {
    fn new(slot: Slot, template: &str, prefill_from: Option<FactCategory>) -> Self {
        Self { slot, template: template.to_string(), prefill_from }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InquiryConfig {
    pub max_turns: usize,
    pub session_timeout_minutes: f64,
    pub red_flags: Vec<String>,
    /// Severity at or above this sets the escalation hint.
    pub severity_escalation: u8,
    /// Required outlier slots in priority order.
    pub outlier_slots: Vec<SlotSpec>,
    /// Required routine slots in priority order.
    pub routine_slots: Vec<SlotSpec>,
}

impl Default for InquiryConfig {
    fn default() -> Self {
        Self {
            max_turns: 5,
            session_timeout_minutes: 30.0,
            red_flags: vec!["chest pain".into(), "fainted".into(), "can't breathe".into()],
            severity_escalation: 8,
            outlier_slots: vec![
                SlotSpec::new(
                    Slot::SymptomPresent,
                    "We noticed an unusual {channel} reading. Are you having any symptoms right now? (yes or no)",
                    None,
                ),
                SlotSpec::new(Slot::Severity, "On a scale of 0 to 10, how strong are your symptoms?", None),
                SlotSpec::new(Slot::Onset, "When did you first notice this?", None),
                SlotSpec::new(
                    Slot::Context,
                    "What were you doing just before? Any new medication, activity or stress?",
                    Some(FactCategory::Medication),
                ),
            ],
            routine_slots: vec![
                SlotSpec::new(Slot::Adherent, "Did you follow your {topic} plan today? (yes, no, or partially)", None),
                SlotSpec::new(
                    Slot::Barriers,
                    "Did anything make your {topic} plan hard to follow? (say none if not)",
                    None,
                ),
                SlotSpec::new(Slot::SideEffects, "Have you noticed any side effects? (yes or no)", None),
            ],
        }
    }
}

impl InquiryConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_turns == 0 {
            return Err(ConfigError::new("inquiry.max_turns", "must be at least 1"));
        }
        if !(self.session_timeout_minutes > 0.0) {
            return Err(ConfigError::new("inquiry.session_timeout_minutes", "must be positive"));
        }
        if self.severity_escalation > 10 {
            return Err(ConfigError::new("inquiry.severity_escalation", "must lie in 0..=10"));
        }
        for (name, slots) in [("outlier_slots", &self.outlier_slots), ("routine_slots", &self.routine_slots)]
        {
            if slots.is_empty() {
                return Err(ConfigError::new(format!("inquiry.{name}"), "needs at least one slot"));
            }
            for (i, spec) in slots.iter().enumerate() {
                if slots[..i].iter().any(|s| s.slot == spec.slot) {
                    return Err(ConfigError::new(format!("inquiry.{name}[{i}].slot"), "duplicate slot"));
                }
                if spec.template.trim().is_empty() {
                    return Err(ConfigError::new(
                        format!("inquiry.{name}[{i}].template"),
                        "must not be empty",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn slots_for(&self, track: Track) -> &[SlotSpec] {
        match track {
            Track::Outlier => &self.outlier_slots,
            Track::Routine => &self.routine_slots,
        }
    }

    pub fn timeout(&self) -> Span {
        Span::from_secs_f64(self.session_timeout_minutes * 60.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
    Exhausted,
    Abandoned,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        self != SessionStatus::Open
    }

    pub fn name(self) -> &'static str {
        match self {
            SessionStatus::Open => "open",
            SessionStatus::Complete => "complete",
            SessionStatus::Exhausted => "exhausted",
            SessionStatus::Abandoned => "abandoned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotState {
    pub slot: Slot,
    pub template: String,
    pub value: Option<FilledSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub slot: Slot,
    pub question: String,
    pub answer: String,
    pub asked_at: Timestamp,
    pub answered_at: Timestamp,
    /// Whether the answer filled the targeted slot.
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub session_id: SessionId,
    pub slot: Slot,
    pub text: String,
    pub clarify: bool,
    pub asked_at: Timestamp,
    pub generator: Generator,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NextQuestion {
    Ask { question: Question },
    Done { status: SessionStatus },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquirySession {
    pub session_id: SessionId,
    pub trigger_id: TriggerId,
    pub patient_id: PatientId,
    pub track: Track,
    pub slots: Vec<SlotState>,
    pub turns: Vec<Turn>,
    pub status: SessionStatus,
    pub max_turns: usize,
    /// Digest of the context bundle the session was opened with.
    pub context_ref: String,
    pub pending: Option<Question>,
    pub opened_at: Timestamp,
    pub last_activity: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InquiryError {
    #[error("trigger {0} already has a session")]
    DuplicateSession(TriggerId),
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error("session {0} has no pending question")]
    NoPendingQuestion(SessionId),
    #[error("session {0} is still open")]
    SessionStillOpen(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

impl InquiryError {
    pub fn code(&self) -> &'static str {
        match self {
            InquiryError::DuplicateSession(_) => "DuplicateSession",
            InquiryError::SessionClosed(_) => "SessionClosed",
            InquiryError::NoPendingQuestion(_) => "NoPendingQuestion",
            InquiryError::SessionStillOpen(_) => "SessionStillOpen",
            InquiryError::UnknownSession(_) => "UnknownSession",
            InquiryError::Adapter(_) => "SchemaViolation",
        }
    }
}

/// Hand-off record from a closed session to the decision stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquiryOutcome {
    pub session_id: SessionId,
    pub trigger_id: TriggerId,
    pub patient_id: PatientId,
    pub track: Track,
    pub status: SessionStatus,
    pub filled: BTreeMap<Slot, FilledSlot>,
    pub unanswered: Vec<Slot>,
    pub escalation_hint: bool,
    pub summary: String,
}

impl InquiryOutcome {
    pub fn value(&self, slot: Slot) -> Option<&SlotValue> {
        self.filled.get(&slot).map(|f| &f.value)
    }
}

fn fill_template(template: &str, trigger: &TriggerEvent) -> String {
    let channel = trigger.channel.map(|c| c.plain_name()).unwrap_or("vital sign");
    let topic = trigger.topic.map(|t| t.plain_name()).unwrap_or("care");
    template.replace("{channel}", channel).replace("{topic}", topic)
}

impl InquirySession {
    /// Instantiates the track's slot schema. A slot whose spec names a fact
    /// category is filled from the first such fact in the context bundle.
    pub fn open(
        session_id: SessionId,
        trigger: &TriggerEvent,
        context: &ContextBundle,
        config: &InquiryConfig,
        now: Timestamp,
    ) -> Self {
        let slots = config
            .slots_for(trigger.track)
            .iter()
            .map(|spec| {
                let value = spec.prefill_from.and_then(|category| {
                    context.facts_in(category).next().map(|fact| FilledSlot {
                        value: SlotValue::Text(format!(
                            "known {}: {}",
                            category.name().replace('_', " "),
                            fact.statement.text()
                        )),
                        source: SlotSource::Fact { fact_id: fact.fact_id.clone() },
                    })
                });
                SlotState { slot: spec.slot, template: fill_template(&spec.template, trigger), value }
            })
            .collect();
        Self {
            session_id,
            trigger_id: trigger.trigger_id.clone(),
            patient_id: trigger.patient_id.clone(),
            track: trigger.track,
            slots,
            turns: Vec::new(),
            status: SessionStatus::Open,
            max_turns: config.max_turns,
            context_ref: canonical::digest_of(context),
            pending: None,
            opened_at: now,
            last_activity: now,
        }
    }

    pub fn unfilled(&self) -> impl Iterator<Item = &SlotState> {
        self.slots.iter().filter(|s| s.value.is_none())
    }

    pub fn all_filled(&self) -> bool {
        self.unfilled().next().is_none()
    }

    fn settle(&mut self) {
        if self.status != SessionStatus::Open {
            return;
        }
        if self.all_filled() {
            self.status = SessionStatus::Complete;
            self.pending = None;
        } else if self.turns.len() >= self.max_turns {
            self.status = SessionStatus::Exhausted;
            self.pending = None;
        }
    }

    /// Returns the pending question, asking a new one for the
    /// highest-priority unfilled slot if none is pending. Closes the session
    /// when it is complete or out of turns.
    pub fn next_question(&mut self, adapter: &Adapter, now: Timestamp) -> Result<NextQuestion, InquiryError> {
        self.settle();
        if self.status != SessionStatus::Open {
            return Ok(NextQuestion::Done { status: self.status });
        }
        if let Some(q) = &self.pending {
            return Ok(NextQuestion::Ask { question: q.clone() });
        }
        let target = self.unfilled().next().expect("open session has an unfilled slot").clone();
        let clarify = self.turns.last().is_some_and(|t| t.slot == target.slot && !t.filled);
        let request = GenerationRequest::new(
            Task::Question,
            json!({
                "track": self.track,
                "slot": target.slot,
                "clarify": clarify,
                "template": target.template,
            }),
            self.turns.len() as u64,
        );
        let result = adapter.generate(&request)?;
        let question = Question {
            session_id: self.session_id.clone(),
            slot: target.slot,
            text: result.text,
            clarify,
            asked_at: now,
            generator: result.generator,
            degraded: result.degraded,
        };
        self.pending = Some(question.clone());
        Ok(NextQuestion::Ask { question })
    }

    /// Records the answer to the pending question. An unparseable answer
    /// still consumes the turn and leaves the slot unfilled.
    pub fn record_answer(&mut self, answer: &str, now: Timestamp) -> Result<&Turn, InquiryError> {
        if self.status != SessionStatus::Open {
            return Err(InquiryError::SessionClosed(self.session_id.clone()));
        }
        let Some(question) = self.pending.take() else {
            return Err(InquiryError::NoPendingQuestion(self.session_id.clone()));
        };
        let value = extract(question.slot.domain(), answer);
        let turn_index = self.turns.len();
        if let Some(value) = &value {
            let state = self
                .slots
                .iter_mut()
                .find(|s| s.slot == question.slot)
                .expect("targeted slot is in the schema");
            state.value =
                Some(FilledSlot { value: value.clone(), source: SlotSource::Turn { turn: turn_index } });
        }
        self.turns.push(Turn {
            slot: question.slot,
            question: question.text,
            answer: answer.to_string(),
            asked_at: question.asked_at,
            answered_at: now,
            filled: value.is_some(),
        });
        self.last_activity = now;
        self.settle();
        Ok(&self.turns[turn_index])
    }

    /// Marks an open session abandoned when no answer arrived within the
    /// timeout. Returns whether it was abandoned.
    pub fn abandon_if_idle(&mut self, now: Timestamp, timeout: Span) -> bool {
        if self.status == SessionStatus::Open && now - self.last_activity >= timeout {
            self.status = SessionStatus::Abandoned;
            self.pending = None;
            true
        } else {
            false
        }
    }

    pub fn summarize(&self, config: &InquiryConfig) -> Result<InquiryOutcome, InquiryError> {
        if self.status == SessionStatus::Open {
            return Err(InquiryError::SessionStillOpen(self.session_id.clone()));
        }
        let filled: BTreeMap<Slot, FilledSlot> =
            self.slots.iter().filter_map(|s| s.value.clone().map(|v| (s.slot, v))).collect();
        let unanswered: Vec<Slot> = self.unfilled().map(|s| s.slot).collect();
        let escalation_hint = escalation_hint(&filled, config);
        let summary = self
            .slots
            .iter()
            .map(|s| match &s.value {
                Some(v) => format!("{}: {}", s.slot, v.value),
                None => format!("{}: unanswered", s.slot),
            })
            .collect::<Vec<_>>()
            .join("; ");
        Ok(InquiryOutcome {
            session_id: self.session_id.clone(),
            trigger_id: self.trigger_id.clone(),
            patient_id: self.patient_id.clone(),
            track: self.track,
            status: self.status,
            filled,
            unanswered,
            escalation_hint,
            summary,
        })
    }
}

fn normalize(text: &str) -> String {
    text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'")
}

/// True when a filled free-text slot contains a red-flag term or the
/// severity reaches the escalation threshold.
pub fn escalation_hint(filled: &BTreeMap<Slot, FilledSlot>, config: &InquiryConfig) -> bool {
    filled.values().any(|f| match &f.value {
        SlotValue::Severity(n) => *n >= config.severity_escalation,
        SlotValue::Text(text) => {
            let text = normalize(text);
            config.red_flags.iter().any(|flag| text.contains(&normalize(flag)))
        }
        SlotValue::Choice(_) => false,
    })
}

/// All sessions, at most one per trigger.
#[derive(Debug, Clone, Default)]
pub struct SessionBook {
    sessions: BTreeMap<SessionId, InquirySession>,
    by_trigger: BTreeMap<TriggerId, SessionId>,
    counters: BTreeMap<PatientId, u64>,
}

impl SessionBook {
    pub fn open(
        &mut self,
        trigger: &TriggerEvent,
        context: &ContextBundle,
        config: &InquiryConfig,
        now: Timestamp,
    ) -> Result<&mut InquirySession, InquiryError> {
        if self.by_trigger.contains_key(&trigger.trigger_id) {
            return Err(InquiryError::DuplicateSession(trigger.trigger_id.clone()));
        }
        let n = self.counters.entry(trigger.patient_id.clone()).or_insert(0);
        *n += 1;
        let id = SessionId::new(format!("ses-{}-{:04}", trigger.patient_id, *n));
        let session = InquirySession::open(id.clone(), trigger, context, config, now);
        self.by_trigger.insert(trigger.trigger_id.clone(), id.clone());
        Ok(self.sessions.entry(id).or_insert(session))
    }

    pub fn get(&self, id: &SessionId) -> Option<&InquirySession> {
        self.sessions.get(id)
    }

    pub fn get_mut(&mut self, id: &SessionId) -> Option<&mut InquirySession> {
        self.sessions.get_mut(id)
    }

    pub fn for_trigger(&self, trigger: &TriggerId) -> Option<&InquirySession> {
        self.by_trigger.get(trigger).and_then(|id| self.sessions.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &InquirySession> {
        self.sessions.values()
    }

    pub fn open_ids(&self) -> Vec<SessionId> {
        self.sessions
            .values()
            .filter(|s| s.status == SessionStatus::Open)
            .map(|s| s.session_id.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}
