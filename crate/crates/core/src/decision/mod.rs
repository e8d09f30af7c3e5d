//! Provisional clinical responses and the tiered approval state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{Adapter, AdapterError, GenerationRequest, Generator, Task};
use crate::config::ConfigError;
use crate::ids::{ActorId, FactId, PatientId, ResponseId, SegmentId, SessionId, TriggerId};
use crate::inquiry::{Choice, InquiryOutcome, Slot, SlotSource, SlotValue};
use crate::memory::{ContextBundle, FactCategory, Statement};
use crate::time::{Span, Timestamp};
use crate::triggers::{Grade, Topic, Track, TriggerEvent};

/// Triage tiers, ordered by urgency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    SelfCare,
    ScheduleAppointment,
    ContactClinician,
    UrgentCare,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::SelfCare => "self_care",
            Tier::ScheduleAppointment => "schedule_appointment",
            Tier::ContactClinician => "contact_clinician",
            Tier::UrgentCare => "urgent_care",
        }
    }

    /// High-risk tiers always need an explicit clinician approval.
    pub fn requires_review(self) -> bool {
        self >= Tier::ContactClinician
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ApprovalState {
    PendingReview,
    Deferred { deadline: Timestamp },
    Released,
    Withdrawn,
}

impl ApprovalState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ApprovalState::Released | ApprovalState::Withdrawn)
    }

    pub fn name(self) -> &'static str {
        match self {
            ApprovalState::PendingReview => "pending_review",
            ApprovalState::Deferred { .. } => "deferred",
            ApprovalState::Released => "released",
            ApprovalState::Withdrawn => "withdrawn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Approve,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorRole {
    Clinician,
    Patient,
    Service,
    System,
}

impl ActorRole {
    pub fn name(self) -> &'static str {
        match self {
            ActorRole::Clinician => "clinician",
            ActorRole::Patient => "patient",
            ActorRole::Service => "service",
            ActorRole::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub actor: ActorId,
    pub role: ActorRole,
    pub verdict: VerdictKind,
    pub at: Timestamp,
    pub note: Option<String>,
    /// Whether the note may be shown to the patient.
    #[serde(default)]
    pub share_note: bool,
}

pub const AUTO_RELEASE_NOTE: &str = "auto-release";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub state: ApprovalState,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceRef {
    Segment { segment_id: SegmentId },
    Slot { slot: Slot },
    Fact { fact_id: FactId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    /// Clinician-facing statement, may cite measured values and scores.
    pub statement: String,
    /// Plain-language summary safe for the patient.
    pub plain: String,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub text: String,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceSummary {
    pub topic: Topic,
    pub adherent: Option<Choice>,
    pub barriers: Option<String>,
    pub side_effects: Option<bool>,
}

impl AdherenceSummary {
    /// Plain wording for the patient.
    pub fn plain(&self) -> String {
        let status = match self.adherent {
            Some(Choice::Yes) => "followed",
            Some(Choice::Partial) => "partly followed",
            Some(Choice::No) => "did not follow",
            None => "did not report on",
        };
        format!("You {status} your {} plan.", self.topic.plain_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionalResponse {
    pub response_id: ResponseId,
    pub trigger_id: TriggerId,
    pub session_id: Option<SessionId>,
    pub patient_id: PatientId,
    pub track: Track,
    pub trigger_grade: Grade,
    pub effective_grade: Grade,
    pub escalation_hint: bool,
    pub triage_tier: Tier,
    pub factors: Vec<Factor>,
    pub recommendations: Vec<Recommendation>,
    /// Patient-facing wording, generated from patient-visible inputs only.
    pub guidance: String,
    pub guidance_generator: Generator,
    pub guidance_degraded: bool,
    pub adherence: Option<AdherenceSummary>,
    /// Statements a clinician approval confirms as long-term facts.
    pub assertions: Vec<Statement>,
    pub approval: Approval,
    pub created_at: Timestamp,
    pub released_at: Option<Timestamp>,
}

impl ProvisionalResponse {
    pub fn state(&self) -> ApprovalState {
        self.approval.state
    }

    pub fn has_clinician_approval(&self) -> bool {
        self.approval
            .verdicts
            .iter()
            .any(|v| v.role == ActorRole::Clinician && v.verdict == VerdictKind::Approve)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    pub deferral_hours: f64,
    pub fallback_message: String,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self { deferral_hours: 24.0, fallback_message: "Your care team is reviewing your data.".into() }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.deferral_hours > 0.0) {
            return Err(ConfigError::new("decision.deferral_hours", "must be positive"));
        }
        if self.fallback_message.trim().is_empty() {
            return Err(ConfigError::new("decision.fallback_message", "must not be empty"));
        }
        Ok(())
    }

    pub fn deferral(&self) -> Span {
        Span::from_secs_f64(self.deferral_hours * 3600.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("outcome for trigger {outcome} does not belong to trigger {trigger}")]
    MismatchedSession { trigger: TriggerId, outcome: TriggerId },
    #[error("response {0} is already {1}")]
    TerminalState(ResponseId, &'static str),
    #[error("actor {0} is not a clinician")]
    UnauthorizedActor(ActorId),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

impl DecisionError {
    pub fn code(&self) -> &'static str {
        match self {
            DecisionError::MismatchedSession { .. } => "MismatchedSession",
            DecisionError::TerminalState(..) => "TerminalState",
            DecisionError::UnauthorizedActor(_) => "UnauthorizedActor",
            DecisionError::Adapter(_) => "SchemaViolation",
        }
    }
}

/// Effective grade and tier for a trigger grade and escalation hint.
///
/// The hint raises the grade one level; an already-high grade with a hint
/// goes to urgent care.
pub fn triage(grade: Grade, hint: bool) -> (Grade, Tier) {
    let effective = if hint { grade.escalated() } else { grade };
    let tier = match effective {
        Grade::High if hint && grade == Grade::High => Tier::UrgentCare,
        Grade::High => Tier::ContactClinician,
        Grade::Medium => Tier::ScheduleAppointment,
        Grade::Low => Tier::SelfCare,
    };
    (effective, tier)
}

fn slot_ref(slot: Slot, outcome: &InquiryOutcome) -> EvidenceRef {
    match outcome.filled.get(&slot).map(|f| &f.source) {
        Some(SlotSource::Fact { fact_id }) => EvidenceRef::Fact { fact_id: fact_id.clone() },
        _ => EvidenceRef::Slot { slot },
    }
}

fn outlier_factors(
    trigger: &TriggerEvent,
    outcome: Option<&InquiryOutcome>,
    context: &ContextBundle,
) -> Vec<Factor> {
    let mut factors = Vec::new();
    if let Some(channel) = trigger.channel {
        for ev in &trigger.evidence {
            let mut statement = format!(
                "{channel} median {:.1} {} (range {:.1}-{:.1}) over {:.0} s; anomaly score {:.3}",
                ev.stats.median,
                channel.unit(),
                ev.stats.min,
                ev.stats.max,
                ev.stats.duration_seconds,
                ev.score,
            );
            if !ev.rule_hits.is_empty() {
                let rules: Vec<_> = ev.rule_hits.iter().map(|h| h.rule.as_str()).collect();
                statement.push_str(&format!("; rules {}", rules.join(", ")));
            }
            factors.push(Factor {
                statement,
                plain: format!("Your {} readings were outside your usual range.", channel.plain_name()),
                evidence: vec![EvidenceRef::Segment { segment_id: ev.segment_id.clone() }],
            });
        }
    }
    if let Some(outcome) = outcome {
        if let Some(SlotValue::Choice(c)) = outcome.value(Slot::SymptomPresent) {
            let mut evidence = vec![slot_ref(Slot::SymptomPresent, outcome)];
            let mut detail = String::new();
            if let Some(v) = outcome.value(Slot::Severity) {
                detail.push_str(&format!(", severity {v}"));
                evidence.push(slot_ref(Slot::Severity, outcome));
            }
            if let Some(v) = outcome.value(Slot::Onset) {
                detail.push_str(&format!(", onset {v}"));
                evidence.push(slot_ref(Slot::Onset, outcome));
            }
            let (statement, plain) = match c {
                Choice::Yes => {
                    (format!("patient reports symptoms{detail}"), "You reported symptoms.".to_string())
                }
                _ => {
                    (format!("patient reports no symptoms{detail}"), "You reported no symptoms.".to_string())
                }
            };
            factors.push(Factor { statement, plain, evidence });
        }
        if let Some(v) = outcome.value(Slot::Context) {
            factors.push(Factor {
                statement: format!("reported context: {v}"),
                plain: "You told us what you were doing at the time.".into(),
                evidence: vec![slot_ref(Slot::Context, outcome)],
            });
        }
    }
    for fact in context.facts_in(FactCategory::Condition) {
        factors.push(Factor {
            statement: format!("known condition: {}", fact.statement.text()),
            plain: "Your care history was taken into account.".into(),
            evidence: vec![EvidenceRef::Fact { fact_id: fact.fact_id.clone() }],
        });
    }
    factors
}

fn outlier_recommendations(tier: Tier) -> Vec<Recommendation> {
    let first = match tier {
        Tier::UrgentCare => "Seek urgent care now, or call emergency services if symptoms get worse.",
        Tier::ContactClinician => "Contact your care team today about these readings.",
        Tier::ScheduleAppointment => "Book a follow-up appointment in the coming days.",
        Tier::SelfCare => "Rest and keep an eye on how you feel.",
    };
    vec![
        Recommendation { text: first.into(), evidence: Vec::new() },
        Recommendation {
            text: "Keep wearing your device so readings continue.".into(),
            evidence: Vec::new(),
        },
    ]
}

fn adherence_summary(topic: Topic, outcome: Option<&InquiryOutcome>) -> AdherenceSummary {
    let adherent = outcome.and_then(|o| match o.value(Slot::Adherent) {
        Some(SlotValue::Choice(c)) => Some(*c),
        _ => None,
    });
    let barriers = outcome.and_then(|o| match o.value(Slot::Barriers) {
        Some(SlotValue::Text(t)) if !is_none_text(t) => Some(t.clone()),
        _ => None,
    });
    let side_effects = outcome.and_then(|o| match o.value(Slot::SideEffects) {
        Some(SlotValue::Choice(c)) => Some(*c == Choice::Yes),
        _ => None,
    });
    AdherenceSummary { topic, adherent, barriers, side_effects }
}

fn is_none_text(text: &str) -> bool {
    matches!(text.trim().to_lowercase().trim_end_matches('.'), "none" | "no" | "nothing" | "n/a")
}

fn routine_factors(summary: &AdherenceSummary) -> Vec<Factor> {
    let topic = summary.topic.plain_name();
    let mut factors = Vec::new();
    if let Some(a) = summary.adherent {
        factors.push(Factor {
            statement: format!("{topic} adherence reported: {}", a.name()),
            plain: summary.plain(),
            evidence: vec![EvidenceRef::Slot { slot: Slot::Adherent }],
        });
    }
    if let Some(b) = &summary.barriers {
        factors.push(Factor {
            statement: format!("reported barrier: {b}"),
            plain: "You mentioned something that makes the plan harder.".into(),
            evidence: vec![EvidenceRef::Slot { slot: Slot::Barriers }],
        });
    }
    if summary.side_effects == Some(true) {
        factors.push(Factor {
            statement: "patient reports side effects".into(),
            plain: "You reported side effects.".into(),
            evidence: vec![EvidenceRef::Slot { slot: Slot::SideEffects }],
        });
    }
    factors
}

fn routine_recommendations(summary: &AdherenceSummary) -> Vec<Recommendation> {
    let topic = summary.topic.plain_name();
    let mut recs = Vec::new();
    match summary.adherent {
        Some(Choice::Yes) => recs.push(Recommendation {
            text: format!("Keep following your {topic} plan."),
            evidence: vec![EvidenceRef::Slot { slot: Slot::Adherent }],
        }),
        Some(_) => recs.push(Recommendation {
            text: format!("Review your {topic} plan with your care team to make it easier to follow."),
            evidence: vec![EvidenceRef::Slot { slot: Slot::Adherent }],
        }),
        None => recs.push(Recommendation {
            text: format!("Please complete your next {topic} check-in."),
            evidence: Vec::new(),
        }),
    }
    if let Some(b) = &summary.barriers {
        recs.push(Recommendation {
            text: format!("Plan around this barrier: {b}."),
            evidence: vec![EvidenceRef::Slot { slot: Slot::Barriers }],
        });
    }
    if summary.side_effects == Some(true) {
        recs.push(Recommendation {
            text: "Tell your care team about the side effects you noticed.".into(),
            evidence: vec![EvidenceRef::Slot { slot: Slot::SideEffects }],
        });
    }
    recs
}

fn assertions(trigger: &TriggerEvent, tier: Tier, summary: Option<&AdherenceSummary>) -> Vec<Statement> {
    match (trigger.track, summary) {
        (Track::Routine, Some(s)) => {
            let mut out = Vec::new();
            if let Some(a) = s.adherent {
                let category = if s.topic == Topic::Medication {
                    FactCategory::Medication
                } else {
                    FactCategory::AdherencePattern
                };
                let value = match a {
                    Choice::Yes => "taken as planned",
                    Choice::Partial => "partly followed",
                    Choice::No => "not followed",
                };
                out.push(Statement::new(category, format!("{} plan", s.topic.name()), value));
            }
            if let Some(b) = &s.barriers {
                out.push(Statement::new(
                    FactCategory::Preference,
                    format!("{} barrier", s.topic.name()),
                    b.clone(),
                ));
            }
            out
        }
        _ => trigger
            .channel
            .map(|c| {
                vec![Statement::new(FactCategory::Condition, format!("{} episode", c.name()), tier.name())]
            })
            .unwrap_or_default(),
    }
}

/// Statements a closed session contributes toward recurrence promotion.
pub fn observed_statements(trigger: &TriggerEvent, outcome: &InquiryOutcome) -> Vec<Statement> {
    match trigger.track {
        Track::Routine => {
            let topic = trigger.topic.map(|t| t.name()).unwrap_or("care");
            match outcome.value(Slot::Adherent) {
                Some(SlotValue::Choice(c)) => {
                    vec![Statement::new(
                        FactCategory::AdherencePattern,
                        format!("{topic} adherence"),
                        c.name(),
                    )]
                }
                _ => Vec::new(),
            }
        }
        Track::Outlier => Vec::new(),
    }
}

/// Builds the provisional response for a trigger and its inquiry outcome
/// (absent when the trigger had no session).
pub fn decide(
    response_id: ResponseId,
    trigger: &TriggerEvent,
    outcome: Option<&InquiryOutcome>,
    context: &ContextBundle,
    config: &DecisionConfig,
    adapter: &Adapter,
    now: Timestamp,
) -> Result<ProvisionalResponse, DecisionError> {
    if let Some(o) = outcome {
        if o.trigger_id != trigger.trigger_id {
            return Err(DecisionError::MismatchedSession {
                trigger: trigger.trigger_id.clone(),
                outcome: o.trigger_id.clone(),
            });
        }
    }
    let hint = outcome.is_some_and(|o| o.escalation_hint);
    let (effective_grade, tier) = triage(trigger.grade, hint);
    let (factors, recommendations, adherence) = match trigger.track {
        Track::Outlier => (outlier_factors(trigger, outcome, context), outlier_recommendations(tier), None),
        Track::Routine => {
            let summary = adherence_summary(trigger.topic.unwrap_or(Topic::SymptomDiary), outcome);
            let mut recs = routine_recommendations(&summary);
            if tier > Tier::SelfCare {
                recs.insert(0, outlier_recommendations(tier).remove(0));
            }
            (routine_factors(&summary), recs, Some(summary))
        }
    };
    // Patient-visible inputs only: track, tier and recommendation wording.
    let request = GenerationRequest::new(
        Task::Recommendation,
        json!({
            "track": trigger.track,
            "tier": tier,
            "points": recommendations.iter().map(|r| r.text.clone()).collect::<Vec<_>>(),
        }),
        0,
    );
    let guidance = adapter.generate(&request)?;
    let state = if tier.requires_review() {
        ApprovalState::PendingReview
    } else {
        ApprovalState::Deferred { deadline: now + config.deferral() }
    };
    Ok(ProvisionalResponse {
        response_id,
        trigger_id: trigger.trigger_id.clone(),
        session_id: outcome.map(|o| o.session_id.clone()),
        patient_id: trigger.patient_id.clone(),
        track: trigger.track,
        trigger_grade: trigger.grade,
        effective_grade,
        escalation_hint: hint,
        triage_tier: tier,
        assertions: assertions(trigger, tier, adherence.as_ref()),
        factors,
        recommendations,
        guidance: guidance.text,
        guidance_generator: guidance.generator,
        guidance_degraded: guidance.degraded,
        adherence,
        approval: Approval { state, verdicts: Vec::new() },
        created_at: now,
        released_at: None,
    })
}

/// Applies a clinician verdict. A deferred response whose deadline has
/// passed counts as released.
pub fn apply_verdict(
    response: &mut ProvisionalResponse,
    verdict: Verdict,
) -> Result<ApprovalState, DecisionError> {
    if verdict.role != ActorRole::Clinician {
        return Err(DecisionError::UnauthorizedActor(verdict.actor));
    }
    let state = response.approval.state;
    let expired = matches!(state, ApprovalState::Deferred { deadline } if verdict.at >= deadline);
    if state.is_terminal() || expired {
        let shown = if expired { "released" } else { state.name() };
        return Err(DecisionError::TerminalState(response.response_id.clone(), shown));
    }
    let next = match verdict.verdict {
        VerdictKind::Approve => ApprovalState::Released,
        VerdictKind::Reject => ApprovalState::Withdrawn,
    };
    if next == ApprovalState::Released {
        response.released_at = Some(verdict.at);
    }
    response.approval.verdicts.push(verdict);
    response.approval.state = next;
    Ok(next)
}

/// Auto-releases a deferred response whose deadline is at or before `now`.
pub fn expire_deferral(response: &mut ProvisionalResponse, now: Timestamp) -> bool {
    let ApprovalState::Deferred { deadline } = response.approval.state else {
        return false;
    };
    if deadline > now {
        return false;
    }
    response.approval.verdicts.push(Verdict {
        actor: ActorId::from("system"),
        role: ActorRole::System,
        verdict: VerdictKind::Approve,
        at: deadline,
        note: Some(AUTO_RELEASE_NOTE.into()),
        share_note: false,
    });
    response.approval.state = ApprovalState::Released;
    response.released_at = Some(deadline);
    true
}

/// Expires every deferred response due by `now`; returns the released ids.
pub fn expire_deferrals<'a>(
    responses: impl IntoIterator<Item = &'a mut ProvisionalResponse>,
    now: Timestamp,
) -> Vec<ResponseId> {
    responses.into_iter().filter_map(|r| expire_deferral(r, now).then(|| r.response_id.clone())).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ids::PlanId;
    use crate::inquiry::{FilledSlot, SessionStatus};
    use crate::triggers::TriggerSource;
    use crate::vitals::Channel;

    fn t(s: i64) -> Timestamp {
        Timestamp::from_seconds(s)
    }

    fn trigger(track: Track, grade: Grade) -> TriggerEvent {
        TriggerEvent {
            trigger_id: TriggerId::from("trg-1"),
            patient_id: PatientId::from("p1"),
            track,
            grade,
            source: TriggerSource::Schedule { plan_id: PlanId::from("plan") },
            channel: (track == Track::Outlier).then_some(Channel::Spo2),
            topic: (track == Track::Routine).then_some(Topic::Medication),
            plan_id: None,
            evidence: Vec::new(),
            created_at: t(0),
        }
    }

    fn outcome(track: Track, hint: bool, slots: &[(Slot, SlotValue)]) -> InquiryOutcome {
        InquiryOutcome {
            session_id: SessionId::from("ses-1"),
            trigger_id: TriggerId::from("trg-1"),
            patient_id: PatientId::from("p1"),
            track,
            status: SessionStatus::Complete,
            filled: slots
                .iter()
                .enumerate()
                .map(|(i, (s, v))| {
                    (*s, FilledSlot { value: v.clone(), source: SlotSource::Turn { turn: i } })
                })
                .collect::<BTreeMap<_, _>>(),
            unanswered: Vec::new(),
            escalation_hint: hint,
            summary: String::new(),
        }
    }

    fn run(trigger: &TriggerEvent, outcome: Option<&InquiryOutcome>) -> ProvisionalResponse {
        let ctx = ContextBundle::empty(PatientId::from("p1"), t(0));
        decide(
            ResponseId::from("rsp-1"),
            trigger,
            outcome,
            &ctx,
            &DecisionConfig::default(),
            &Adapter::mock(),
            t(100),
        )
        .unwrap()
    }

    fn clinician(verdict: VerdictKind, at: i64) -> Verdict {
        Verdict {
            actor: ActorId::from("dr"),
            role: ActorRole::Clinician,
            verdict,
            at: t(at),
            note: None,
            share_note: false,
        }
    }

    #[test]
    fn high_with_hint_is_urgent_pending() {
        let r = run(&trigger(Track::Outlier, Grade::High), Some(&outcome(Track::Outlier, true, &[])));
        assert_eq!(r.triage_tier, Tier::UrgentCare);
        assert_eq!(r.state(), ApprovalState::PendingReview);
    }

    #[test]
    fn medium_is_deferred_appointment() {
        let r = run(&trigger(Track::Outlier, Grade::Medium), Some(&outcome(Track::Outlier, false, &[])));
        assert_eq!(r.triage_tier, Tier::ScheduleAppointment);
        assert_eq!(r.state(), ApprovalState::Deferred { deadline: t(100) + Span::from_hours(24) });
    }

    #[test]
    fn routine_partial_with_barrier() {
        let o = outcome(
            Track::Routine,
            false,
            &[
                (Slot::Adherent, SlotValue::Choice(Choice::Partial)),
                (Slot::Barriers, SlotValue::Text("forgets evening dose".into())),
            ],
        );
        let r = run(&trigger(Track::Routine, Grade::Low), Some(&o));
        assert_eq!(r.triage_tier, Tier::SelfCare);
        assert!(matches!(r.state(), ApprovalState::Deferred { .. }));
        assert!(r.recommendations.iter().any(|rec| rec.text.contains("forgets evening dose")
            && rec.evidence == vec![EvidenceRef::Slot { slot: Slot::Barriers }]));
        assert!(r.factors.iter().all(|f| !f.evidence.is_empty()));
    }

    #[test]
    fn mismatched_outcome_rejected() {
        let mut o = outcome(Track::Outlier, false, &[]);
        o.trigger_id = TriggerId::from("other");
        let ctx = ContextBundle::empty(PatientId::from("p1"), t(0));
        let err = decide(
            ResponseId::from("r"),
            &trigger(Track::Outlier, Grade::High),
            Some(&o),
            &ctx,
            &DecisionConfig::default(),
            &Adapter::mock(),
            t(0),
        )
        .unwrap_err();
        assert_eq!(err.code(), "MismatchedSession");
    }

    #[test]
    fn transitions() {
        let mut r = run(&trigger(Track::Outlier, Grade::High), None);
        assert_eq!(
            apply_verdict(&mut r, clinician(VerdictKind::Approve, 200)).unwrap(),
            ApprovalState::Released
        );
        let err = apply_verdict(&mut r, clinician(VerdictKind::Approve, 300)).unwrap_err();
        assert_eq!(err.code(), "TerminalState");

        let mut d = run(&trigger(Track::Outlier, Grade::Low), None);
        assert_eq!(
            apply_verdict(&mut d, clinician(VerdictKind::Reject, 200)).unwrap(),
            ApprovalState::Withdrawn
        );
    }

    #[test]
    fn patients_cannot_approve() {
        let mut r = run(&trigger(Track::Outlier, Grade::High), None);
        let mut v = clinician(VerdictKind::Approve, 200);
        v.role = ActorRole::Patient;
        assert_eq!(apply_verdict(&mut r, v).unwrap_err().code(), "UnauthorizedActor");
        assert_eq!(r.state(), ApprovalState::PendingReview);
    }

    #[test]
    fn deferral_expiry_is_inclusive() {
        let mut r = run(&trigger(Track::Routine, Grade::Low), None);
        let deadline = t(100) + Span::from_hours(24);
        assert!(!expire_deferral(&mut r, deadline - Span::from_secs(1)));
        assert!(expire_deferral(&mut r, deadline));
        assert_eq!(r.state(), ApprovalState::Released);
        assert_eq!(r.released_at, Some(deadline));
        assert_eq!(r.approval.verdicts[0].note.as_deref(), Some(AUTO_RELEASE_NOTE));
    }

    #[test]
    fn pending_review_never_auto_releases() {
        let mut r = run(&trigger(Track::Outlier, Grade::High), None);
        assert!(!expire_deferral(&mut r, t(i64::MAX / 2000)));
    }

    #[test]
    fn tier_map() {
        assert_eq!(triage(Grade::Low, false), (Grade::Low, Tier::SelfCare));
        assert_eq!(triage(Grade::Low, true), (Grade::Medium, Tier::ScheduleAppointment));
        assert_eq!(triage(Grade::Medium, true), (Grade::High, Tier::ContactClinician));
        assert_eq!(triage(Grade::High, false), (Grade::High, Tier::ContactClinician));
        assert_eq!(triage(Grade::High, true), (Grade::High, Tier::UrgentCare));
    }
}
