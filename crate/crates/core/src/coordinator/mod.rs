//! Audience-specific reports under field-level visibility rules, and
//! periodic routine digests for clinician confirmation.

mod digest;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ConfigError;
use crate::decision::{ApprovalState, ProvisionalResponse, Tier, VerdictKind};
use crate::ids::{PatientId, ReportId, ResponseId, SegmentId};
use crate::inquiry::InquiryOutcome;
use crate::time::Timestamp;
use crate::triggers::TriggerEvent;
use crate::vitals::Narrative;

pub use digest::{build_digest, AdherenceStats, ConfirmationState, Digest, DigestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportField {
    TriageGuidance,
    FactorSummaries,
    Recommendations,
    AdherenceSummary,
    ClinicianNote,
    EvidenceRefs,
    AnomalyScores,
    ModelRationale,
    SlotValues,
    Narratives,
    ApprovalStatus,
}

impl ReportField {
    pub const ALL: [ReportField; 11] = [
        ReportField::TriageGuidance,
        ReportField::FactorSummaries,
        ReportField::Recommendations,
        ReportField::AdherenceSummary,
        ReportField::ClinicianNote,
        ReportField::EvidenceRefs,
        ReportField::AnomalyScores,
        ReportField::ModelRationale,
        ReportField::SlotValues,
        ReportField::Narratives,
        ReportField::ApprovalStatus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportField::TriageGuidance => "triage_guidance",
            ReportField::FactorSummaries => "factor_summaries",
            ReportField::Recommendations => "recommendations",
            ReportField::AdherenceSummary => "adherence_summary",
            ReportField::ClinicianNote => "clinician_note",
            ReportField::EvidenceRefs => "evidence_refs",
            ReportField::AnomalyScores => "anomaly_scores",
            ReportField::ModelRationale => "model_rationale",
            ReportField::SlotValues => "slot_values",
            ReportField::Narratives => "narratives",
            ReportField::ApprovalStatus => "approval_status",
        }
    }
}

impl fmt::Display for ReportField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    PatientVisible,
    ClinicianOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisibilityPolicy {
    pub fields: BTreeMap<ReportField, Visibility>,
}

impl Default for VisibilityPolicy {
    fn default() -> Self {
        use ReportField::*;
        use Visibility::*;
        Self {
            fields: BTreeMap::from([
                (TriageGuidance, PatientVisible),
                (FactorSummaries, PatientVisible),
                (Recommendations, PatientVisible),
                (AdherenceSummary, PatientVisible),
                (ClinicianNote, PatientVisible),
                (EvidenceRefs, ClinicianOnly),
                (AnomalyScores, ClinicianOnly),
                (ModelRationale, ClinicianOnly),
                (SlotValues, ClinicianOnly),
                (Narratives, ClinicianOnly),
                (ApprovalStatus, ClinicianOnly),
            ]),
        }
    }
}

impl VisibilityPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for field in ReportField::ALL {
            if !self.fields.contains_key(&field) {
                return Err(ConfigError::new(
                    format!("coordinator.visibility.{field}"),
                    "field has no audience tag",
                ));
            }
        }
        Ok(())
    }

    pub fn of(&self, field: ReportField) -> Visibility {
        // Untagged fields are treated as restricted.
        self.fields.get(&field).copied().unwrap_or(Visibility::ClinicianOnly)
    }

    pub fn patient_visible(&self, field: ReportField) -> bool {
        self.of(field) == Visibility::PatientVisible
    }

    pub fn clinician_only_fields(&self) -> Vec<ReportField> {
        ReportField::ALL.into_iter().filter(|f| !self.patient_visible(*f)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    Patient,
    Clinician,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// Content of a response.
    Guidance,
    /// Neutral patient notice sent when a response is withdrawn.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryState {
    Queued,
    Delivered,
}

/// A report's place in the delivery queue. Reports themselves never change
/// once rendered; delivery is tracked alongside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub report_id: ReportId,
    pub patient_id: PatientId,
    pub audience: Audience,
    pub state: DeliveryState,
    pub queued_at: Timestamp,
    pub delivered_at: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Summary,
    Guidance,
    Evidence,
    Approval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportItem {
    pub field: ReportField,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub items: Vec<ReportItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: ReportId,
    pub audience: Audience,
    pub kind: ReportKind,
    pub patient_id: PatientId,
    pub response_id: ResponseId,
    pub tier: Tier,
    pub flagged: bool,
    pub withdrawn: bool,
    /// The response's approval state when this report was rendered.
    pub response_state: String,
    pub sections: Vec<Section>,
    pub supersedes: Option<ReportId>,
    pub rendered_at: Timestamp,
}

impl Report {
    pub fn fields(&self) -> impl Iterator<Item = ReportField> + '_ {
        self.sections.iter().flat_map(|s| s.items.iter().map(|i| i.field))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordinatorError {
    #[error("response {0} is not released")]
    NotReleased(ResponseId),
}

impl CoordinatorError {
    pub fn code(&self) -> &'static str {
        match self {
            CoordinatorError::NotReleased(_) => "NotReleased",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinatorConfig {
    pub visibility: VisibilityPolicy,
    /// Digest periods are whole weeks starting local Monday 00:00.
    pub digest_period_days: i64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self { visibility: VisibilityPolicy::default(), digest_period_days: 7 }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.visibility.validate()?;
        if self.digest_period_days != 7 {
            return Err(ConfigError::new(
                "coordinator.digest_period_days",
                "only weekly digests are supported",
            ));
        }
        Ok(())
    }
}

/// Builds sections, keeping only items whose field passes `keep`.
struct SectionBuilder<'a> {
    keep: &'a dyn Fn(ReportField) -> bool,
    sections: Vec<Section>,
}

impl<'a> SectionBuilder<'a> {
    fn new(keep: &'a dyn Fn(ReportField) -> bool) -> Self {
        Self { keep, sections: Vec::new() }
    }

    fn section(&mut self, kind: SectionKind, items: Vec<(ReportField, Value)>) {
        let items: Vec<ReportItem> = items
            .into_iter()
            .filter(|(f, _)| (self.keep)(*f))
            .map(|(field, value)| ReportItem { field, value })
            .collect();
        if !items.is_empty() {
            self.sections.push(Section { kind, items });
        }
    }

    fn finish(self) -> Vec<Section> {
        self.sections
    }
}

fn shared_note(response: &ProvisionalResponse) -> Option<String> {
    response
        .approval
        .verdicts
        .iter()
        .rev()
        .find(|v| v.share_note && v.verdict == VerdictKind::Approve)
        .and_then(|v| v.note.clone())
}

/// Renders the patient report for a released response. Only fields the
/// policy tags patient-visible are included.
pub fn render_patient_report(
    report_id: ReportId,
    response: &ProvisionalResponse,
    policy: &VisibilityPolicy,
    now: Timestamp,
) -> Result<Report, CoordinatorError> {
    if response.state() != ApprovalState::Released {
        return Err(CoordinatorError::NotReleased(response.response_id.clone()));
    }
    let keep = |f: ReportField| policy.patient_visible(f);
    let mut b = SectionBuilder::new(&keep);
    let mut summary = vec![(ReportField::TriageGuidance, json!(response.guidance))];
    if !response.factors.is_empty() {
        let plain: Vec<&str> = response.factors.iter().map(|f| f.plain.as_str()).collect();
        summary.push((ReportField::FactorSummaries, json!(plain)));
    }
    if let Some(a) = &response.adherence {
        summary.push((ReportField::AdherenceSummary, json!(a.plain())));
    }
    b.section(SectionKind::Summary, summary);
    let mut guidance = vec![(
        ReportField::Recommendations,
        json!(response.recommendations.iter().map(|r| r.text.as_str()).collect::<Vec<_>>()),
    )];
    if let Some(note) = shared_note(response) {
        guidance.push((ReportField::ClinicianNote, json!(note)));
    }
    b.section(SectionKind::Guidance, guidance);
    Ok(Report {
        report_id,
        audience: Audience::Patient,
        kind: ReportKind::Guidance,
        patient_id: response.patient_id.clone(),
        response_id: response.response_id.clone(),
        tier: response.triage_tier,
        flagged: false,
        withdrawn: false,
        response_state: response.state().name().into(),
        sections: b.finish(),
        supersedes: None,
        rendered_at: now,
    })
}

/// The neutral notice a patient receives instead of a withdrawn response.
pub fn render_fallback_report(
    report_id: ReportId,
    response: &ProvisionalResponse,
    message: &str,
    now: Timestamp,
) -> Report {
    Report {
        report_id,
        audience: Audience::Patient,
        kind: ReportKind::Fallback,
        patient_id: response.patient_id.clone(),
        response_id: response.response_id.clone(),
        tier: Tier::SelfCare,
        flagged: false,
        withdrawn: false,
        response_state: response.state().name().into(),
        sections: vec![Section {
            kind: SectionKind::Guidance,
            items: vec![ReportItem { field: ReportField::TriageGuidance, value: json!(message) }],
        }],
        supersedes: None,
        rendered_at: now,
    }
}

/// Everything a clinician needs to review a response.
pub struct ClinicianInputs<'a> {
    pub response: &'a ProvisionalResponse,
    pub trigger: &'a TriggerEvent,
    pub outcome: Option<&'a InquiryOutcome>,
    pub narratives: &'a BTreeMap<SegmentId, Narrative>,
}

/// Renders the full clinician view; flagged iff the response awaits review.
pub fn render_clinician_report(
    report_id: ReportId,
    inputs: &ClinicianInputs<'_>,
    supersedes: Option<ReportId>,
    now: Timestamp,
) -> Report {
    let r = inputs.response;
    let keep = |_: ReportField| true;
    let mut b = SectionBuilder::new(&keep);
    let mut summary = vec![
        (ReportField::TriageGuidance, json!(r.guidance)),
        (ReportField::FactorSummaries, json!(r.factors.iter().map(|f| f.plain.as_str()).collect::<Vec<_>>())),
    ];
    if let Some(a) = &r.adherence {
        summary.push((ReportField::AdherenceSummary, json!(a)));
    }
    b.section(SectionKind::Summary, summary);
    b.section(SectionKind::Guidance, vec![(ReportField::Recommendations, json!(r.recommendations))]);
    let scores: Vec<Value> = inputs
        .trigger
        .evidence
        .iter()
        .map(|e| json!({"segment_id": e.segment_id, "score": e.score, "grade": e.grade, "rule_hits": e.rule_hits}))
        .collect();
    let narratives: Vec<&Narrative> =
        inputs.trigger.evidence.iter().filter_map(|e| inputs.narratives.get(&e.segment_id)).collect();
    let mut evidence = vec![
        (ReportField::EvidenceRefs, json!(r.factors.iter().map(|f| &f.evidence).collect::<Vec<_>>())),
        (ReportField::AnomalyScores, json!(scores)),
        (
            ReportField::ModelRationale,
            json!({
                "factors": r.factors.iter().map(|f| f.statement.as_str()).collect::<Vec<_>>(),
                "trigger_grade": r.trigger_grade,
                "effective_grade": r.effective_grade,
                "escalation_hint": r.escalation_hint,
                "trigger_source": inputs.trigger.source,
                "guidance_generator": r.guidance_generator,
                "guidance_degraded": r.guidance_degraded,
            }),
        ),
    ];
    if let Some(o) = inputs.outcome {
        evidence.push((
            ReportField::SlotValues,
            json!({"status": o.status, "filled": o.filled, "unanswered": o.unanswered}),
        ));
    }
    if !narratives.is_empty() {
        evidence.push((ReportField::Narratives, json!(narratives)));
    }
    b.section(SectionKind::Evidence, evidence);
    b.section(
        SectionKind::Approval,
        vec![(ReportField::ApprovalStatus, json!({"approval": r.approval, "response_id": r.response_id}))],
    );
    Report {
        report_id,
        audience: Audience::Clinician,
        kind: ReportKind::Guidance,
        patient_id: r.patient_id.clone(),
        response_id: r.response_id.clone(),
        tier: r.triage_tier,
        flagged: r.state() == ApprovalState::PendingReview,
        withdrawn: r.state() == ApprovalState::Withdrawn,
        response_state: r.state().name().into(),
        sections: b.finish(),
        supersedes,
        rendered_at: now,
    }
}

/// Finds a leak in a serialized patient report: a clinician-only field tag,
/// or an anomaly-score token. Returns the offending token.
pub fn find_leak(report_json: &str, policy: &VisibilityPolicy, scores: &[f64]) -> Option<String> {
    for field in policy.clinician_only_fields() {
        if report_json.contains(&format!("\"{}\"", field.name())) {
            return Some(field.name().to_string());
        }
    }
    let lower = report_json.to_lowercase();
    for token in ["score", "z-score", "anomaly"] {
        if lower.contains(token) {
            return Some(token.to_string());
        }
    }
    // a zero score (warm-up) carries no information
    for s in scores.iter().filter(|s| **s != 0.0) {
        for rendered in [format!("{s}"), format!("{s:.3}"), format!("{s:.2}")] {
            // only tokens specific enough to identify a score
            if rendered.len() >= 4 && contains_number(report_json, &rendered) {
                return Some(rendered);
            }
        }
    }
    None
}

/// `token` occurs as a whole number, not inside a longer digit run such as
/// a timestamp.
fn contains_number(haystack: &str, token: &str) -> bool {
    let bytes = haystack.as_bytes();
    haystack.match_indices(token).any(|(i, _)| {
        let before = i.checked_sub(1).map(|j| bytes[j]);
        let after = bytes.get(i + token.len()).copied();
        !before.is_some_and(|b| b.is_ascii_digit() || b == b'.') && !after.is_some_and(|b| b.is_ascii_digit())
    })
}
