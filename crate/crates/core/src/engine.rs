//! The deterministic pipeline: one state machine that every stage hangs off.
//!
//! `Engine::apply` is the only mutation entry point. Given the same config,
//! adapter backend and input sequence it produces the same events, the same
//! reports and the same state digest.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::warn;

use crate::adapter::Adapter;
use crate::canonical;
use crate::config::EngineConfig;
use crate::coordinator::{
    build_digest, render_clinician_report, render_fallback_report, render_patient_report, Audience,
    ClinicianInputs, ConfirmationState, Delivery, DeliveryState, Digest, Report,
};
use crate::decision::{
    apply_verdict, decide, expire_deferrals, observed_statements, ActorRole, ApprovalState, DecisionError,
    ProvisionalResponse, Verdict, VerdictKind,
};
use crate::ids::{
    ActorId, DigestId, EventId, PatientId, ReportId, ResponseId, SegmentId, SessionId, TriggerId,
};
use crate::inquiry::{InquiryError, InquiryOutcome, InquirySession, NextQuestion, SessionBook};
use crate::memory::{
    EventKind, FactCategory, MemoryEvent, MemoryStore, RetrainJobDescriptor, Statement, OBSERVED_KEY,
};
use crate::time::{LocalZone, Span, Timestamp};
use crate::triggers::{
    grade_risk, poll_routine, score_anomaly, Baseline, Candidate, Comparator, OutlierCandidate, PlanSpec,
    Routed, RoutinePlan, TriggerEvent, TriggerRouter,
};
use crate::vitals::{
    compute_stats, interpret_segment, Channel, IngestError, IngestState, Narrative, VitalSample, VitalSegment,
};

/// One externally supplied input. The time it is applied at travels
/// alongside it, not inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Input {
    RegisterPatient {
        patient_id: PatientId,
        #[serde(default)]
        utc_offset_minutes: i32,
        #[serde(default)]
        plans: Vec<PlanSpec>,
    },
    Ingest {
        samples: Vec<VitalSample>,
    },
    Answer {
        session_id: SessionId,
        text: String,
    },
    Verdict {
        response_id: ResponseId,
        actor: ActorId,
        role: ActorRole,
        verdict: VerdictKind,
        #[serde(default)]
        note: Option<String>,
        #[serde(default)]
        share_note: bool,
    },
    Tick,
    Flush {
        #[serde(default)]
        patient_id: Option<PatientId>,
    },
    ConfirmDigest {
        digest_id: DigestId,
        actor: ActorId,
        role: ActorRole,
    },
}

impl Input {
    pub fn name(&self) -> &'static str {
        match self {
            Input::RegisterPatient { .. } => "register_patient",
            Input::Ingest { .. } => "ingest",
            Input::Answer { .. } => "answer",
            Input::Verdict { .. } => "verdict",
            Input::Tick => "tick",
            Input::Flush { .. } => "flush",
            Input::ConfirmDigest { .. } => "confirm_digest",
        }
    }

    /// The patient an input concerns, when it concerns exactly one.
    pub fn patient_id(&self) -> Option<PatientId> {
        match self {
            Input::RegisterPatient { patient_id, .. } => Some(patient_id.clone()),
            Input::Ingest { samples } => {
                let first = &samples.first()?.patient_id;
                samples.iter().all(|s| &s.patient_id == first).then(|| first.clone())
            }
            Input::Flush { patient_id } => patient_id.clone(),
            _ => None,
        }
    }
}

/// Everything one `apply` produced besides state changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Applied {
    pub now: Timestamp,
    pub events: Vec<MemoryEvent>,
    pub descriptors: Vec<RetrainJobDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("sample {index} rejected: {source}")]
    RejectedSample { index: usize, source: IngestError },
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("patient {0} is already registered")]
    PatientExists(PatientId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown response {0}")]
    UnknownResponse(ResponseId),
    #[error("unknown digest {0}")]
    UnknownDigest(DigestId),
    #[error("digest {0} is already confirmed")]
    AlreadyConfirmed(DigestId),
    #[error("actor {0} may not do this")]
    Forbidden(ActorId),
    #[error("{field}: {message}")]
    InvalidInput { field: String, message: String },
    #[error(transparent)]
    Inquiry(#[from] InquiryError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::RejectedSample { source, .. } => source.code(),
            EngineError::UnknownPatient(_) => "UnknownPatient",
            EngineError::PatientExists(_) => "PatientExists",
            EngineError::UnknownSession(_) => "UnknownSession",
            EngineError::UnknownResponse(_) => "UnknownResponse",
            EngineError::UnknownDigest(_) => "UnknownDigest",
            EngineError::AlreadyConfirmed(_) => "AlreadyConfirmed",
            EngineError::Forbidden(_) => "Forbidden",
            EngineError::InvalidInput { .. } => "InvalidInput",
            EngineError::Inquiry(e) => e.code(),
            EngineError::Decision(e) => e.code(),
        }
    }

    /// The offending input field, when there is one.
    pub fn field(&self) -> Option<String> {
        match self {
            EngineError::RejectedSample { index, source } => {
                let leaf = match source {
                    IngestError::OutOfOrderTimestamp { .. } => "timestamp",
                    _ => "value",
                };
                Some(format!("samples[{index}].{leaf}"))
            }
            EngineError::InvalidInput { field, .. } => Some(field.clone()),
            EngineError::UnknownSession(_) => Some("session_id".into()),
            EngineError::UnknownResponse(_) => Some("response_id".into()),
            EngineError::UnknownDigest(_) => Some("digest_id".into()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientState {
    pub patient_id: PatientId,
    pub zone: LocalZone,
    pub plans: Vec<RoutinePlan>,
    pub registered_at: Timestamp,
    /// Start of the next digest period still to be built.
    pub next_digest_start: Timestamp,
}

pub struct Engine {
    config: EngineConfig,
    adapter: Adapter,
    clock: Option<Timestamp>,
    patients: BTreeMap<PatientId, PatientState>,
    ingest: IngestState,
    baselines: BTreeMap<(PatientId, Channel), Baseline>,
    router: TriggerRouter,
    narratives: BTreeMap<SegmentId, Narrative>,
    sessions: SessionBook,
    outcomes: BTreeMap<SessionId, InquiryOutcome>,
    responses: BTreeMap<ResponseId, ProvisionalResponse>,
    response_by_trigger: BTreeMap<TriggerId, ResponseId>,
    response_events: BTreeMap<ResponseId, EventId>,
    reports: BTreeMap<ReportId, Report>,
    latest_clinician: BTreeMap<ResponseId, ReportId>,
    deliveries: BTreeMap<ReportId, Delivery>,
    digests: BTreeMap<DigestId, Digest>,
    memory: MemoryStore,
    counters: BTreeMap<(&'static str, PatientId), u64>,
    unruled_channels: BTreeSet<Channel>,
    emitted: Vec<MemoryEvent>,
}

impl Engine {
    pub fn new(config: EngineConfig, adapter: Adapter) -> Self {
        let cooldown = Span::from_secs_f64(config.triggers.cooldown_minutes * 60.0);
        Self {
            ingest: IngestState::new(config.vitals.segmentation),
            router: TriggerRouter::new(cooldown, config.triggers.routine_grade),
            memory: MemoryStore::new(config.memory.clone()),
            config,
            adapter,
            clock: None,
            patients: BTreeMap::new(),
            baselines: BTreeMap::new(),
            narratives: BTreeMap::new(),
            sessions: SessionBook::default(),
            outcomes: BTreeMap::new(),
            responses: BTreeMap::new(),
            response_by_trigger: BTreeMap::new(),
            response_events: BTreeMap::new(),
            reports: BTreeMap::new(),
            latest_clinician: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            digests: BTreeMap::new(),
            counters: BTreeMap::new(),
            unruled_channels: BTreeSet::new(),
            emitted: Vec::new(),
        }
    }

    /// Applies one input at `at`. The engine clock never goes backwards:
    /// an input stamped earlier than the clock is applied at the clock.
    /// A rejected input leaves the state untouched.
    pub fn apply(&mut self, input: &Input, at: Timestamp) -> Result<Applied, EngineError> {
        let now = self.clock.map_or(at, |c| c.max(at));
        let mut descriptors = Vec::new();
        match input {
            Input::RegisterPatient { patient_id, utc_offset_minutes, plans } => {
                self.register(patient_id, *utc_offset_minutes, plans, now)?
            }
            Input::Ingest { samples } => self.ingest_batch(samples, now)?,
            Input::Answer { session_id, text } => self.answer(session_id, text, now)?,
            Input::Verdict { response_id, actor, role, verdict, note, share_note } => {
                let verdict = Verdict {
                    actor: actor.clone(),
                    role: *role,
                    verdict: *verdict,
                    at: now,
                    note: note.clone(),
                    share_note: *share_note,
                };
                self.verdict(response_id, verdict, now)?
            }
            Input::Tick => descriptors = self.tick(now),
            Input::Flush { patient_id } => {
                if let Some(p) = patient_id {
                    if !self.patients.contains_key(p) {
                        return Err(EngineError::UnknownPatient(p.clone()));
                    }
                }
                for segment in self.ingest.flush(patient_id.as_ref()) {
                    self.close_segment(segment, now);
                }
            }
            Input::ConfirmDigest { digest_id, actor, role } => {
                self.confirm_digest(digest_id, actor, *role, now)?
            }
        }
        self.clock = Some(now);
        Ok(Applied { now, events: std::mem::take(&mut self.emitted), descriptors })
    }

    fn register(
        &mut self,
        patient_id: &PatientId,
        utc_offset_minutes: i32,
        plans: &[PlanSpec],
        now: Timestamp,
    ) -> Result<(), EngineError> {
        if self.patients.contains_key(patient_id) {
            return Err(EngineError::PatientExists(patient_id.clone()));
        }
        let zone = LocalZone { utc_offset_minutes };
        if !zone.is_valid() {
            return Err(EngineError::InvalidInput {
                field: "utc_offset_minutes".into(),
                message: "must be within one day".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for plan in plans {
            if !seen.insert(&plan.plan_id) {
                return Err(EngineError::InvalidInput {
                    field: "plans".into(),
                    message: format!("duplicate plan id {}", plan.plan_id),
                });
            }
        }
        self.insert_patient(patient_id, zone, plans, now);
        Ok(())
    }

    fn insert_patient(
        &mut self,
        patient_id: &PatientId,
        zone: LocalZone,
        plans: &[PlanSpec],
        now: Timestamp,
    ) {
        let state = PatientState {
            patient_id: patient_id.clone(),
            zone,
            plans: plans.iter().map(|p| p.bind(patient_id.clone(), now)).collect(),
            registered_at: now,
            next_digest_start: zone.week_start(now),
        };
        self.patients.insert(patient_id.clone(), state);
    }

    /// Validates the whole batch before accepting any of it. Patients seen
    /// for the first time are registered in UTC with no plans.
    fn ingest_batch(&mut self, samples: &[VitalSample], now: Timestamp) -> Result<(), EngineError> {
        let mut last: BTreeMap<(&PatientId, Channel), Timestamp> = BTreeMap::new();
        for (index, sample) in samples.iter().enumerate() {
            let key = (&sample.patient_id, sample.channel);
            let result = match last.get(&key) {
                Some(&prev) if sample.timestamp <= prev => {
                    Err(IngestError::OutOfOrderTimestamp { last: prev, got: sample.timestamp })
                }
                _ => self.ingest.check(sample, &self.config.vitals),
            };
            if let Err(source) = result {
                warn!(index, patient = %sample.patient_id, code = source.code(), "sample rejected: {source}");
                return Err(EngineError::RejectedSample { index, source });
            }
            last.insert(key, sample.timestamp);
        }
        for sample in samples {
            if !self.patients.contains_key(&sample.patient_id) {
                self.insert_patient(&sample.patient_id, LocalZone::UTC, &[], now);
            }
            self.ingest.ingest(sample, &self.config.vitals).expect("batch validated above");
        }
        // Only closures caused by the data itself; silence is judged on tick.
        if let Some(latest) = samples.iter().map(|s| s.timestamp).max() {
            for segment in self.ingest.segment_stream(latest) {
                self.close_segment(segment, now);
            }
        }
        Ok(())
    }

    fn answer(&mut self, session_id: &SessionId, text: &str, now: Timestamp) -> Result<(), EngineError> {
        let session = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| EngineError::UnknownSession(session_id.clone()))?;
        let turn = session.record_answer(text, now)?.clone();
        let patient = session.patient_id.clone();
        let filled = turn.filled;
        self.emit(
            &patient,
            EventKind::SessionTurn,
            now,
            json!({
                "session_id": session_id,
                "turn": turn,
                "summary": format!(
                    "{} asked, {}",
                    turn.slot.name(),
                    if filled { "answered" } else { "not understood" }
                ),
            }),
        );
        self.advance_session(session_id, now);
        Ok(())
    }

    fn verdict(
        &mut self,
        response_id: &ResponseId,
        verdict: Verdict,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        let response = self
            .responses
            .get_mut(response_id)
            .ok_or_else(|| EngineError::UnknownResponse(response_id.clone()))?;
        let payload = verdict_payload(response_id, &verdict);
        let state = apply_verdict(response, verdict)?;
        let patient = response.patient_id.clone();
        let verdict_event = self.emit(&patient, EventKind::Verdict, now, payload);
        match state {
            ApprovalState::Released => {
                if let Some(source) = self.response_events.get(response_id).cloned() {
                    self.memory.confirm_assertions(&source, &verdict_event.event_id, now);
                }
                self.release_to_patient(response_id, now);
            }
            ApprovalState::Withdrawn => {
                let id = self.next_report_id(&patient);
                let response = &self.responses[response_id];
                let report =
                    render_fallback_report(id, response, &self.config.decision.fallback_message, now);
                self.store_report(report, now);
            }
            _ => {}
        }
        self.render_for_clinician(response_id, now);
        Ok(())
    }

    fn confirm_digest(
        &mut self,
        digest_id: &DigestId,
        actor: &ActorId,
        role: ActorRole,
        now: Timestamp,
    ) -> Result<(), EngineError> {
        if role != ActorRole::Clinician {
            return Err(EngineError::Forbidden(actor.clone()));
        }
        let digest =
            self.digests.get_mut(digest_id).ok_or_else(|| EngineError::UnknownDigest(digest_id.clone()))?;
        if digest.confirmation != ConfirmationState::Unconfirmed {
            return Err(EngineError::AlreadyConfirmed(digest_id.clone()));
        }
        digest.confirmation = ConfirmationState::Confirmed { by: actor.clone(), at: now };
        let patient = digest.patient_id.clone();
        self.emit(
            &patient,
            EventKind::Digest,
            now,
            json!({
                "digest_id": digest_id,
                "confirmed_by": actor,
                "summary": format!("digest {digest_id} confirmed"),
            }),
        );
        Ok(())
    }

    fn tick(&mut self, now: Timestamp) -> Vec<RetrainJobDescriptor> {
        let timeout = self.config.inquiry.timeout();
        for id in self.sessions.open_ids() {
            let session = self.sessions.get_mut(&id).expect("listed id");
            if session.abandon_if_idle(now, timeout) {
                self.finalize_session(&id, now);
            }
        }

        for segment in self.ingest.segment_stream(now) {
            self.close_segment(segment, now);
        }

        let patients: Vec<PatientId> = self.patients.keys().cloned().collect();
        for patient in &patients {
            let state = self.patients.get_mut(patient).expect("listed patient");
            let fired = poll_routine(&mut state.plans, now, state.zone);
            for plan in fired {
                if let Routed::Created(id) = self.router.route(Candidate::Routine(plan), now) {
                    self.on_new_trigger(&id, Vec::new(), now);
                }
            }
        }

        let released = expire_deferrals(self.responses.values_mut(), now);
        for id in released {
            let response = &self.responses[&id];
            let verdict = response.approval.verdicts.last().expect("expiry records a verdict").clone();
            let patient = response.patient_id.clone();
            self.emit(&patient, EventKind::Verdict, now, verdict_payload(&id, &verdict));
            self.release_to_patient(&id, now);
            self.render_for_clinician(&id, now);
        }

        for delivery in self.deliveries.values_mut() {
            if delivery.state == DeliveryState::Queued {
                delivery.state = DeliveryState::Delivered;
                delivery.delivered_at = Some(now);
            }
        }

        let period = Span::from_days(self.config.coordinator.digest_period_days);
        for patient in &patients {
            loop {
                let state = &self.patients[patient];
                let start = state.next_digest_start;
                let end = start + period;
                if end > now {
                    break;
                }
                let local_start = start.plus_millis(i64::from(state.zone.utc_offset_minutes) * 60_000);
                let digest_id = DigestId::new(format!("dig-{patient}-{}", &local_start.to_rfc3339()[..10]));
                let digest =
                    build_digest(digest_id.clone(), patient, start, end, self.responses.values(), now);
                self.emit(
                    patient,
                    EventKind::Digest,
                    now,
                    json!({
                        "digest_id": digest_id,
                        "period_start": start,
                        "period_end": end,
                        "stats": digest.stats,
                        "summary": format!("weekly digest with {} check-ins", digest.entries.len()),
                    }),
                );
                self.digests.insert(digest_id, digest);
                self.patients.get_mut(patient).expect("listed patient").next_digest_start = end;
            }
        }

        self.memory.flag_stable_patterns(now)
    }

    fn close_segment(&mut self, segment: VitalSegment, now: Timestamp) {
        let Ok(stats) = compute_stats(&segment) else {
            return;
        };
        let hits = match self.config.triggers.rules.evaluate(&stats, &segment) {
            Ok(hits) => hits,
            Err(e) => {
                if self.unruled_channels.insert(segment.channel) {
                    warn!(channel = %segment.channel, "{e}; using statistical score only");
                }
                Vec::new()
            }
        };
        let key = (segment.patient_id.clone(), segment.channel);
        let baseline = self
            .baselines
            .entry(key)
            .or_insert_with(|| Baseline::new(segment.patient_id.clone(), segment.channel));
        let score = score_anomaly(&stats, baseline, &self.config.triggers.baseline);
        let grade = grade_risk(&hits, score, &self.config.triggers.bands);
        let above = match hits.first() {
            Some(hit) => hit.comparator == Comparator::Above,
            None => stats.median >= baseline.rolling_median,
        };
        let candidate = OutlierCandidate {
            patient_id: segment.patient_id.clone(),
            channel: segment.channel,
            segment_id: segment.segment_id.clone(),
            start: segment.start,
            end: segment.end,
            stats,
            hits,
            score,
            grade,
        };
        let qualifies = candidate.qualifies();
        self.emit(
            &segment.patient_id,
            EventKind::SegmentClosed,
            now,
            json!({
                "segment_id": segment.segment_id,
                "channel": segment.channel,
                "start": segment.start,
                "end": segment.end,
                "closed_reason": segment.closed_reason,
                "stats": stats,
                "summary": format!(
                    "{} median {:.1} {} over {:.0}s",
                    segment.channel.plain_name(),
                    stats.median,
                    segment.channel.unit(),
                    stats.duration_seconds
                ),
            }),
        );
        if !qualifies {
            let baseline = self
                .baselines
                .get_mut(&(segment.patient_id.clone(), segment.channel))
                .expect("inserted above");
            baseline.update(&segment, &stats, &self.config.triggers.baseline);
            return;
        }
        let policy = self.config.vitals.policy(segment.channel);
        match interpret_segment(&segment, &stats, &policy, &self.adapter) {
            Ok(n) => {
                self.narratives.insert(segment.segment_id.clone(), n);
            }
            Err(e) => warn!(segment = %segment.segment_id, "narrative failed: {e}"),
        }
        let excursion = Statement::new(
            FactCategory::BaselinePattern,
            format!("{} excursion", segment.channel.plain_name()),
            if above { "above usual range" } else { "below usual range" },
        );
        match self.router.route(Candidate::Outlier(candidate), now) {
            Routed::Created(id) => self.on_new_trigger(&id, vec![excursion], now),
            Routed::Merged(id) => {
                let grade = self.router.get(&id).expect("routed trigger exists").grade;
                self.emit(
                    &segment.patient_id,
                    EventKind::Trigger,
                    now,
                    json!({
                        "trigger_id": id,
                        "merged_segment": segment.segment_id,
                        "grade": grade,
                        "summary": format!("more evidence for {id}, now {grade}"),
                    }),
                );
            }
            Routed::Suppressed => {}
        }
    }

    fn on_new_trigger(&mut self, id: &TriggerId, statements: Vec<Statement>, now: Timestamp) {
        let trigger = self.router.get(id).expect("routed trigger exists").clone();
        let what = trigger
            .channel
            .map(|c| c.plain_name().to_string())
            .or(trigger.topic.map(|t| t.plain_name().to_string()))
            .unwrap_or_default();
        self.emit(
            &trigger.patient_id,
            EventKind::Trigger,
            now,
            json!({
                "trigger": trigger,
                OBSERVED_KEY: statements,
                "summary": format!("{} check on {what}, {} priority", trigger.track, trigger.grade),
            }),
        );
        let context = self.memory.build_context(&trigger.patient_id, trigger.track, now);
        let session = self
            .sessions
            .open(&trigger, &context, &self.config.inquiry, now)
            .expect("a new trigger has no session");
        let session_id = session.session_id.clone();
        self.advance_session(&session_id, now);
    }

    /// Asks the next question, or closes the session when it has none.
    fn advance_session(&mut self, session_id: &SessionId, now: Timestamp) {
        let session = self.sessions.get_mut(session_id).expect("known session");
        if session.status.is_terminal() {
            return self.finalize_session(session_id, now);
        }
        match session.next_question(&self.adapter, now) {
            Ok(NextQuestion::Ask { .. }) => {}
            Ok(NextQuestion::Done { .. }) => self.finalize_session(session_id, now),
            Err(e) => warn!(session = %session_id, "could not ask: {e}"),
        }
    }

    fn finalize_session(&mut self, session_id: &SessionId, now: Timestamp) {
        let session = self.sessions.get(session_id).expect("known session");
        let outcome = match session.summarize(&self.config.inquiry) {
            Ok(o) => o,
            Err(e) => {
                warn!(session = %session_id, "cannot summarize: {e}");
                return;
            }
        };
        let trigger = self.router.get(&outcome.trigger_id).expect("session trigger exists").clone();
        let patient = trigger.patient_id.clone();
        self.emit(
            &patient,
            EventKind::SessionOutcome,
            now,
            json!({
                "outcome": outcome,
                OBSERVED_KEY: observed_statements(&trigger, &outcome),
                "summary": outcome.summary,
            }),
        );
        self.outcomes.insert(session_id.clone(), outcome);

        let context = self.memory.build_context(&patient, trigger.track, now);
        let response_id = ResponseId::new(format!("rsp-{patient}-{:04}", self.bump("rsp", &patient)));
        let outcome = &self.outcomes[session_id];
        let response = match decide(
            response_id.clone(),
            &trigger,
            Some(outcome),
            &context,
            &self.config.decision,
            &self.adapter,
            now,
        ) {
            Ok(r) => r,
            Err(e) => {
                warn!(trigger = %trigger.trigger_id, "no response: {e}");
                return;
            }
        };
        let event = self.emit(
            &patient,
            EventKind::Response,
            now,
            json!({
                "response_id": response_id,
                "trigger_id": trigger.trigger_id,
                "tier": response.triage_tier,
                "state": response.approval.state,
                crate::memory::ASSERTED_KEY: response.assertions,
                "summary": format!("{} response, {}", response.triage_tier.name(), response.state().name()),
            }),
        );
        self.response_events.insert(response_id.clone(), event.event_id);
        self.response_by_trigger.insert(trigger.trigger_id.clone(), response_id.clone());
        self.responses.insert(response_id.clone(), response);
        self.render_for_clinician(&response_id, now);
    }

    fn release_to_patient(&mut self, response_id: &ResponseId, now: Timestamp) {
        let response = &self.responses[response_id];
        let patient = response.patient_id.clone();
        let id = self.next_report_id(&patient);
        let response = &self.responses[response_id];
        match render_patient_report(id, response, &self.config.coordinator.visibility, now) {
            Ok(report) => self.store_report(report, now),
            Err(e) => warn!(response = %response_id, "{e}"),
        }
    }

    fn render_for_clinician(&mut self, response_id: &ResponseId, now: Timestamp) {
        let patient = self.responses[response_id].patient_id.clone();
        let id = self.next_report_id(&patient);
        let response = &self.responses[response_id];
        let trigger = self.router.get(&response.trigger_id).expect("response trigger exists");
        let inputs = ClinicianInputs {
            response,
            trigger,
            outcome: response.session_id.as_ref().and_then(|s| self.outcomes.get(s)),
            narratives: &self.narratives,
        };
        let supersedes = self.latest_clinician.get(response_id).cloned();
        let report = render_clinician_report(id.clone(), &inputs, supersedes, now);
        self.latest_clinician.insert(response_id.clone(), id);
        self.store_report(report, now);
    }

    fn store_report(&mut self, report: Report, now: Timestamp) {
        let audience = match report.audience {
            Audience::Patient => "patient",
            Audience::Clinician => "clinician",
        };
        let payload = json!({
            "report_id": report.report_id,
            "response_id": report.response_id,
            "audience": report.audience,
            "kind": report.kind,
            "summary": format!("{audience} report {}", report.report_id),
        });
        let patient = report.patient_id.clone();
        self.deliveries.insert(
            report.report_id.clone(),
            Delivery {
                report_id: report.report_id.clone(),
                patient_id: patient.clone(),
                audience: report.audience,
                state: DeliveryState::Queued,
                queued_at: now,
                delivered_at: None,
            },
        );
        self.reports.insert(report.report_id.clone(), report);
        self.emit(&patient, EventKind::Report, now, payload);
    }

    fn next_report_id(&mut self, patient: &PatientId) -> ReportId {
        ReportId::new(format!("rpt-{patient}-{:04}", self.bump("rpt", patient)))
    }

    fn bump(&mut self, kind: &'static str, patient: &PatientId) -> u64 {
        let n = self.counters.entry((kind, patient.clone())).or_insert(0);
        *n += 1;
        *n
    }

    fn emit(&mut self, patient: &PatientId, kind: EventKind, at: Timestamp, payload: Value) -> MemoryEvent {
        let event = self.memory.record(patient, kind, at, payload);
        self.emitted.push(event.clone());
        event
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn adapter(&self) -> &Adapter {
        &self.adapter
    }

    pub fn clock(&self) -> Option<Timestamp> {
        self.clock
    }

    pub fn patient(&self, id: &PatientId) -> Option<&PatientState> {
        self.patients.get(id)
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientState> {
        self.patients.values()
    }

    pub fn baseline(&self, patient: &PatientId, channel: Channel) -> Option<&Baseline> {
        self.baselines.get(&(patient.clone(), channel))
    }

    pub fn ingest_state(&self) -> &IngestState {
        &self.ingest
    }

    pub fn trigger(&self, id: &TriggerId) -> Option<&TriggerEvent> {
        self.router.get(id)
    }

    pub fn triggers(&self) -> impl Iterator<Item = &TriggerEvent> {
        self.router.iter()
    }

    pub fn narrative(&self, segment: &SegmentId) -> Option<&Narrative> {
        self.narratives.get(segment)
    }

    pub fn session(&self, id: &SessionId) -> Option<&InquirySession> {
        self.sessions.get(id)
    }

    pub fn session_for(&self, trigger: &TriggerId) -> Option<&InquirySession> {
        self.sessions.for_trigger(trigger)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &InquirySession> {
        self.sessions.iter()
    }

    /// What the patient should see for a session right now.
    pub fn current_question(&self, id: &SessionId) -> Option<NextQuestion> {
        let session = self.sessions.get(id)?;
        Some(match (&session.pending, session.status.is_terminal()) {
            (Some(q), false) => NextQuestion::Ask { question: q.clone() },
            _ => NextQuestion::Done { status: session.status },
        })
    }

    pub fn outcome(&self, session: &SessionId) -> Option<&InquiryOutcome> {
        self.outcomes.get(session)
    }

    pub fn response(&self, id: &ResponseId) -> Option<&ProvisionalResponse> {
        self.responses.get(id)
    }

    pub fn response_for(&self, trigger: &TriggerId) -> Option<&ProvisionalResponse> {
        self.response_by_trigger.get(trigger).and_then(|id| self.responses.get(id))
    }

    pub fn responses(&self) -> impl Iterator<Item = &ProvisionalResponse> {
        self.responses.values()
    }

    /// Responses awaiting clinician review, oldest first.
    pub fn review_queue(&self) -> Vec<&ProvisionalResponse> {
        let mut queue: Vec<_> =
            self.responses.values().filter(|r| r.state() == ApprovalState::PendingReview).collect();
        queue.sort_by(|a, b| (a.created_at, &a.response_id).cmp(&(b.created_at, &b.response_id)));
        queue
    }

    pub fn report(&self, id: &ReportId) -> Option<&Report> {
        self.reports.get(id)
    }

    pub fn reports(&self) -> impl Iterator<Item = &Report> {
        self.reports.values()
    }

    /// A patient's reports for one audience in rendering order.
    pub fn reports_for(&self, patient: &PatientId, audience: Audience) -> Vec<&Report> {
        let mut out: Vec<_> =
            self.reports.values().filter(|r| &r.patient_id == patient && r.audience == audience).collect();
        out.sort_by(|a, b| (a.rendered_at, &a.report_id).cmp(&(b.rendered_at, &b.report_id)));
        out
    }

    /// The current (not superseded) clinician report for a response.
    pub fn clinician_report(&self, response: &ResponseId) -> Option<&Report> {
        self.latest_clinician.get(response).and_then(|id| self.reports.get(id))
    }

    pub fn delivery(&self, report: &ReportId) -> Option<&Delivery> {
        self.deliveries.get(report)
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &Delivery> {
        self.deliveries.values()
    }

    pub fn digest(&self, id: &DigestId) -> Option<&Digest> {
        self.digests.get(id)
    }

    pub fn digests_for(&self, patient: &PatientId) -> Vec<&Digest> {
        self.digests.values().filter(|d| &d.patient_id == patient).collect()
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    /// SHA-256 over the canonical form of facts, responses and reports.
    pub fn state_digest(&self) -> String {
        let facts: Vec<_> = self.memory.facts().collect();
        canonical::digest_of(&json!({
            "facts": facts,
            "responses": self.responses,
            "reports": self.reports,
        }))
    }
}

fn verdict_payload(response_id: &ResponseId, verdict: &Verdict) -> Value {
    json!({
        "response_id": response_id,
        "actor": verdict.actor,
        "role": verdict.role,
        "verdict": verdict.verdict,
        "note": verdict.note,
        "share_note": verdict.share_note,
        "summary": format!("{} by {}", match verdict.verdict {
            VerdictKind::Approve => "approved",
            VerdictKind::Reject => "rejected",
        }, verdict.role.name()),
    })
}
