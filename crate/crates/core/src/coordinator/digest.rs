use serde::{Deserialize, Serialize};

use crate::decision::{ApprovalState, ProvisionalResponse};
use crate::ids::{ActorId, DigestId, PatientId, ResponseId, TriggerId};
use crate::inquiry::Choice;
use crate::time::Timestamp;
use crate::triggers::{Topic, Track};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceStats {
    pub adherent: usize,
    pub partial: usize,
    pub non_adherent: usize,
    /// Check-ins closed without an adherence answer.
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub response_id: ResponseId,
    pub trigger_id: TriggerId,
    pub topic: Option<Topic>,
    pub adherent: Option<Choice>,
    pub released_at: Timestamp,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ConfirmationState {
    Unconfirmed,
    Confirmed { by: ActorId, at: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest {
    pub digest_id: DigestId,
    pub patient_id: PatientId,
    pub period_start: Timestamp,
    pub period_end: Timestamp,
    pub entries: Vec<DigestEntry>,
    pub stats: AdherenceStats,
    pub confirmation: ConfirmationState,
    pub built_at: Timestamp,
}

/// Aggregates the patient's routine responses released in
/// `[start, end)`, in release order.
pub fn build_digest<'a>(
    digest_id: DigestId,
    patient: &PatientId,
    start: Timestamp,
    end: Timestamp,
    responses: impl IntoIterator<Item = &'a ProvisionalResponse>,
    now: Timestamp,
) -> Digest {
    let mut entries: Vec<DigestEntry> = responses
        .into_iter()
        .filter(|r| {
            &r.patient_id == patient && r.track == Track::Routine && r.state() == ApprovalState::Released
        })
        .filter_map(|r| {
            let at = r.released_at?;
            (at >= start && at < end).then(|| DigestEntry {
                response_id: r.response_id.clone(),
                trigger_id: r.trigger_id.clone(),
                topic: r.adherence.as_ref().map(|a| a.topic),
                adherent: r.adherence.as_ref().and_then(|a| a.adherent),
                released_at: at,
                summary: r.adherence.as_ref().map(|a| a.plain()).unwrap_or_default(),
            })
        })
        .collect();
    entries.sort_by(|a, b| (a.released_at, &a.response_id).cmp(&(b.released_at, &b.response_id)));
    let mut stats = AdherenceStats::default();
    for e in &entries {
        match e.adherent {
            Some(Choice::Yes) => stats.adherent += 1,
            Some(Choice::Partial) => stats.partial += 1,
            Some(Choice::No) => stats.non_adherent += 1,
            None => stats.unknown += 1,
        }
    }
    Digest {
        digest_id,
        patient_id: patient.clone(),
        period_start: start,
        period_end: end,
        entries,
        stats,
        confirmation: ConfirmationState::Unconfirmed,
        built_at: now,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::Generator;
    use crate::decision::{AdherenceSummary, Approval, Tier};
    use crate::triggers::Grade;

    fn released(id: &str, day: i64, adherent: Option<Choice>) -> ProvisionalResponse {
        let at = Timestamp::from_seconds(day * 86_400 + 3600);
        ProvisionalResponse {
            response_id: ResponseId::new(id),
            trigger_id: TriggerId::new(id),
            session_id: None,
            patient_id: PatientId::from("p1"),
            track: Track::Routine,
            trigger_grade: Grade::Low,
            effective_grade: Grade::Low,
            escalation_hint: false,
            triage_tier: Tier::SelfCare,
            factors: Vec::new(),
            recommendations: Vec::new(),
            guidance: "ok".into(),
            guidance_generator: Generator::Mock,
            guidance_degraded: false,
            adherence: Some(AdherenceSummary {
                topic: Topic::Medication,
                adherent,
                barriers: None,
                side_effects: None,
            }),
            assertions: Vec::new(),
            approval: Approval { state: ApprovalState::Released, verdicts: Vec::new() },
            created_at: at,
            released_at: Some(at),
        }
    }

    fn week() -> (Timestamp, Timestamp) {
        (Timestamp::from_seconds(0), Timestamp::from_seconds(7 * 86_400))
    }

    #[test]
    fn counts_answers() {
        let rs = [
            released("a", 0, Some(Choice::Yes)),
            released("b", 1, Some(Choice::Yes)),
            released("c", 2, Some(Choice::Partial)),
        ];
        let (s, e) = week();
        let d = build_digest(DigestId::from("d"), &PatientId::from("p1"), s, e, &rs, e);
        assert_eq!(d.entries.len(), 3);
        assert_eq!(d.stats, AdherenceStats { adherent: 2, partial: 1, non_adherent: 0, unknown: 0 });
    }

    #[test]
    fn empty_period_still_builds() {
        let (s, e) = week();
        let d = build_digest(DigestId::from("d"), &PatientId::from("p1"), s, e, &[], e);
        assert!(d.entries.is_empty());
        assert_eq!(d.stats, AdherenceStats::default());
    }

    #[test]
    fn period_is_half_open() {
        let rs = [released("in", 6, Some(Choice::No)), released("out", 7, Some(Choice::No))];
        let (s, e) = week();
        let d = build_digest(DigestId::from("d"), &PatientId::from("p1"), s, e, &rs, e);
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.entries[0].response_id, ResponseId::from("in"));
    }
}
