//! Whole-state checks run after a scenario or a replay. Each returns the
//! violations it found; an empty list means the property holds.

use std::collections::{BTreeMap, BTreeSet};

use crate::coordinator::{find_leak, Audience, ReportKind};
use crate::decision::{ActorRole, ApprovalState, Tier, VerdictKind, AUTO_RELEASE_NOTE};
use crate::engine::Engine;
use crate::ids::ResponseId;
use crate::inquiry::SessionStatus;
use crate::triggers::Track;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub check: &'static str,
    pub detail: String,
}

fn finding(check: &'static str, detail: impl Into<String>) -> Finding {
    Finding { check, detail: detail.into() }
}

pub fn audit_all(engine: &Engine) -> Vec<Finding> {
    let mut out = Vec::new();
    out.extend(check_safety(engine));
    out.extend(check_deferrals(engine));
    out.extend(check_release_gate(engine));
    out.extend(check_leaks(engine));
    out.extend(check_digests(engine));
    out.extend(check_sessions(engine));
    out.extend(check_memory(engine));
    out
}

/// No contact-clinician or urgent-care response is released without a
/// clinician's approve verdict.
pub fn check_safety(engine: &Engine) -> Vec<Finding> {
    engine
        .responses()
        .filter(|r| r.triage_tier >= Tier::ContactClinician && r.state() == ApprovalState::Released)
        .filter(|r| !r.has_clinician_approval())
        .map(|r| finding("safety", format!("{} released without clinician approval", r.response_id)))
        .collect()
}

/// Auto-released responses were released exactly at their deadline, and
/// verdict lists are ordered by time.
pub fn check_deferrals(engine: &Engine) -> Vec<Finding> {
    let deferral = engine.config().decision.deferral();
    let mut out = Vec::new();
    for r in engine.responses() {
        if r.approval.verdicts.windows(2).any(|w| w[0].at > w[1].at) {
            out.push(finding("deferral", format!("{} verdicts out of order", r.response_id)));
        }
        let auto = r
            .approval
            .verdicts
            .iter()
            .find(|v| v.role == ActorRole::System && v.note.as_deref() == Some(AUTO_RELEASE_NOTE));
        if let Some(v) = auto {
            let deadline = r.created_at + deferral;
            if r.triage_tier.requires_review() || v.at != deadline || r.released_at != Some(deadline) {
                out.push(finding("deferral", format!("{} auto-released off its deadline", r.response_id)));
            }
        }
    }
    out
}

/// Every patient guidance report was rendered from a released response.
pub fn check_release_gate(engine: &Engine) -> Vec<Finding> {
    engine
        .reports()
        .filter(|r| r.audience == Audience::Patient && r.kind == ReportKind::Guidance)
        .filter(|r| r.response_state != ApprovalState::Released.name())
        .map(|r| {
            finding("release_gate", format!("{} rendered from a {} response", r.report_id, r.response_state))
        })
        .collect()
}

/// Serialized patient reports carry no clinician-only field and no score.
pub fn check_leaks(engine: &Engine) -> Vec<Finding> {
    let policy = &engine.config().coordinator.visibility;
    let mut scores: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for t in engine.triggers() {
        scores.entry(t.patient_id.clone()).or_default().extend(t.evidence.iter().map(|e| e.score));
    }
    let mut out = Vec::new();
    for report in engine.reports().filter(|r| r.audience == Audience::Patient) {
        let json = serde_json::to_string(report).expect("reports serialize");
        let own = scores.get(&report.patient_id).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(token) = find_leak(&json, policy, own) {
            out.push(finding("leak", format!("{} contains {token}", report.report_id)));
        }
    }
    out
}

/// Consecutive digests cover every released routine response in their span
/// exactly once.
pub fn check_digests(engine: &Engine) -> Vec<Finding> {
    let mut out = Vec::new();
    for patient in engine.patients() {
        let mut digests = engine.digests_for(&patient.patient_id);
        digests.sort_by_key(|d| d.period_start);
        if digests.windows(2).any(|w| w[0].period_end != w[1].period_start) {
            out.push(finding("digest", format!("{} digests are not contiguous", patient.patient_id)));
        }
        let (Some(first), Some(last)) = (digests.first(), digests.last()) else {
            continue;
        };
        let mut seen: BTreeSet<&ResponseId> = BTreeSet::new();
        for e in digests.iter().flat_map(|d| &d.entries) {
            if !seen.insert(&e.response_id) {
                out.push(finding("digest", format!("{} appears twice", e.response_id)));
            }
        }
        let expected: BTreeSet<&ResponseId> = engine
            .responses()
            .filter(|r| r.patient_id == patient.patient_id && r.track == Track::Routine)
            .filter(|r| r.released_at.is_some_and(|at| at >= first.period_start && at < last.period_end))
            .map(|r| &r.response_id)
            .collect();
        if seen != expected {
            out.push(finding("digest", format!("{} digests miss or add check-ins", patient.patient_id)));
        }
    }
    out
}

/// Sessions end within their turn budget and are complete exactly when
/// every slot is filled.
pub fn check_sessions(engine: &Engine) -> Vec<Finding> {
    let mut out = Vec::new();
    for s in engine.sessions() {
        if s.turns.len() > s.max_turns {
            out.push(finding("inquiry", format!("{} took {} turns", s.session_id, s.turns.len())));
        }
        let filled = s.slots.iter().all(|slot| slot.value.is_some());
        let wrong = match s.status {
            SessionStatus::Complete => !filled,
            SessionStatus::Exhausted => filled,
            _ => false,
        };
        if wrong {
            out.push(finding(
                "inquiry",
                format!("{} is {} with filled={filled}", s.session_id, s.status.name()),
            ));
        }
    }
    out
}

/// Facts re-derive from their provenance, snapshots stay inside the window,
/// events are ordered, and no fact set is flagged twice.
pub fn check_memory(engine: &Engine) -> Vec<Finding> {
    let memory = engine.memory();
    let mut out = Vec::new();
    if let Err(e) = memory.audit() {
        out.push(finding("memory", e));
    }
    let now = engine.clock().unwrap_or_default();
    let window = memory.config().snapshot_window();
    for patient in memory.patients() {
        let snapshot = memory.read_snapshot(patient, now);
        if snapshot.events.iter().any(|e| e.occurred_at <= now - window || e.occurred_at > now) {
            out.push(finding("memory", format!("{patient} snapshot exceeds its window")));
        }
        let events = memory.events(patient);
        if events.windows(2).any(|w| (w[0].occurred_at, &w[0].event_id) >= (w[1].occurred_at, &w[1].event_id))
        {
            out.push(finding("memory", format!("{patient} events are not totally ordered")));
        }
    }
    let mut sets = BTreeSet::new();
    for d in memory.descriptors() {
        let mut ids = d.fact_ids.clone();
        ids.sort();
        if !sets.insert(ids) {
            out.push(finding("memory", format!("{} repeats a flagged fact set", d.job_id)));
        }
    }
    for fact in memory.facts() {
        if let crate::memory::Confirmation::ClinicianConfirmed { verdict } = &fact.confirmation {
            let ok = memory.event(verdict).is_some_and(|e| {
                e.payload["verdict"] == serde_json::json!(VerdictKind::Approve)
                    && e.payload["role"] == serde_json::json!(ActorRole::Clinician)
            });
            if !ok {
                out.push(finding("memory", format!("{} cites a non-approval", fact.fact_id)));
            }
        }
    }
    out
}
