use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Evidence, Grade, RoutinePlan, RuleHit, Track, TriggerEvent, TriggerSource};
use crate::ids::{PatientId, SegmentId, TriggerId};
use crate::time::{Span, Timestamp};
use crate::vitals::{Channel, SegmentStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierCandidate {
    pub patient_id: PatientId,
    pub channel: Channel,
    pub segment_id: SegmentId,
    pub start: Timestamp,
    pub end: Timestamp,
    pub stats: SegmentStats,
    pub hits: Vec<RuleHit>,
    pub score: f64,
    pub grade: Grade,
}

impl OutlierCandidate {
    /// Emission floor: grade at least medium, or any rule hit.
    pub fn qualifies(&self) -> bool {
        self.grade >= Grade::Medium || !self.hits.is_empty()
    }

    fn evidence(&self) -> Evidence {
        Evidence {
            segment_id: self.segment_id.clone(),
            start: self.start,
            end: self.end,
            stats: self.stats,
            score: self.score,
            rule_hits: self.hits.clone(),
            grade: self.grade,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Outlier(OutlierCandidate),
    Routine(RoutinePlan),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Routed {
    Created(TriggerId),
    /// Evidence was folded into an open trigger inside the cool-down window.
    Merged(TriggerId),
    /// Below the emission floor.
    Suppressed,
}

#[derive(Debug, Clone, PartialEq)]
struct OpenOutlier {
    trigger_id: TriggerId,
    last_evidence_at: Timestamp,
}

/// Owns every trigger and the per-(patient, channel) cool-down state.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerRouter {
    cooldown: Span,
    routine_grade: Grade,
    triggers: BTreeMap<TriggerId, TriggerEvent>,
    open: BTreeMap<(PatientId, Channel), OpenOutlier>,
    counters: BTreeMap<PatientId, u64>,
}

impl TriggerRouter {
    pub fn new(cooldown: Span, routine_grade: Grade) -> Self {
        Self {
            cooldown,
            routine_grade,
            triggers: BTreeMap::new(),
            open: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &TriggerId) -> Option<&TriggerEvent> {
        self.triggers.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TriggerEvent> {
        self.triggers.values()
    }

    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    fn next_id(&mut self, patient: &PatientId) -> TriggerId {
        let n = self.counters.entry(patient.clone()).or_insert(0);
        *n += 1;
        TriggerId::new(format!("trg-{patient}-{:04}", *n))
    }

    /// Labels the candidate's track and either creates a trigger, merges it
    /// into the open one for the same stream, or drops it below the floor.
    pub fn route(&mut self, candidate: Candidate, now: Timestamp) -> Routed {
        match candidate {
            Candidate::Routine(plan) => {
                let trigger_id = self.next_id(&plan.patient_id);
                let event = TriggerEvent {
                    trigger_id: trigger_id.clone(),
                    patient_id: plan.patient_id.clone(),
                    track: Track::Routine,
                    grade: self.routine_grade,
                    source: TriggerSource::Schedule { plan_id: plan.plan_id.clone() },
                    channel: None,
                    topic: Some(plan.topic),
                    plan_id: Some(plan.plan_id),
                    evidence: Vec::new(),
                    created_at: now,
                };
                self.triggers.insert(trigger_id.clone(), event);
                Routed::Created(trigger_id)
            }
            Candidate::Outlier(c) => {
                if !c.qualifies() {
                    return Routed::Suppressed;
                }
                let key = (c.patient_id.clone(), c.channel);
                if let Some(open) = self.open.get_mut(&key) {
                    if c.end - open.last_evidence_at <= self.cooldown {
                        open.last_evidence_at = c.end;
                        let trigger =
                            self.triggers.get_mut(&open.trigger_id).expect("open trigger is stored");
                        trigger.grade = trigger.grade.max(c.grade);
                        trigger.evidence.push(c.evidence());
                        return Routed::Merged(open.trigger_id.clone());
                    }
                }
                let trigger_id = self.next_id(&c.patient_id);
                let source = if c.hits.is_empty() {
                    TriggerSource::Statistical { score: c.score }
                } else {
                    TriggerSource::Rule { rules: c.hits.iter().map(|h| h.rule.clone()).collect() }
                };
                let event = TriggerEvent {
                    trigger_id: trigger_id.clone(),
                    patient_id: c.patient_id.clone(),
                    track: Track::Outlier,
                    grade: c.grade,
                    source,
                    channel: Some(c.channel),
                    topic: None,
                    plan_id: None,
                    evidence: vec![c.evidence()],
                    created_at: now,
                };
                self.triggers.insert(trigger_id.clone(), event);
                self.open
                    .insert(key, OpenOutlier { trigger_id: trigger_id.clone(), last_evidence_at: c.end });
                Routed::Created(trigger_id)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::PlanId;
    use crate::triggers::{grade_risk, Bands, Cadence, LocalTime, Topic};

    fn candidate(end_min: i64, score: f64) -> OutlierCandidate {
        let end = Timestamp::from_seconds(end_min * 60);
        OutlierCandidate {
            patient_id: PatientId::from("p1"),
            channel: Channel::HeartRate,
            segment_id: SegmentId::new(format!("seg-{end_min}")),
            start: end - Span::from_minutes(5),
            end,
            stats: SegmentStats {
                mean: 100.0,
                min: 100.0,
                max: 100.0,
                median: 100.0,
                mad: 0.0,
                slope: 0.0,
                sample_count: 300,
                duration_seconds: 299.0,
            },
            hits: Vec::new(),
            score,
            grade: grade_risk(&[], score, &Bands::default()),
        }
    }

    fn router() -> TriggerRouter {
        TriggerRouter::new(Span::from_minutes(30), Grade::Low)
    }

    #[test]
    fn high_score_creates_outlier_trigger() {
        let mut r = router();
        let Routed::Created(id) =
            r.route(Candidate::Outlier(candidate(10, 4.047)), Timestamp::from_seconds(600))
        else {
            panic!("expected a new trigger")
        };
        let t = r.get(&id).unwrap();
        assert_eq!(t.track, Track::Outlier);
        assert_eq!(t.grade, Grade::High);
        assert_eq!(t.evidence.len(), 1);
        assert!(matches!(t.source, TriggerSource::Statistical { .. }));
    }

    #[test]
    fn second_segment_within_cooldown_merges() {
        let mut r = router();
        let Routed::Created(id) =
            r.route(Candidate::Outlier(candidate(10, 5.0)), Timestamp::from_seconds(600))
        else {
            panic!()
        };
        let merged = r.route(Candidate::Outlier(candidate(20, 3.0)), Timestamp::from_seconds(1200));
        assert_eq!(merged, Routed::Merged(id.clone()));
        assert_eq!(r.len(), 1);
        assert_eq!(r.get(&id).unwrap().evidence.len(), 2);
        // grade never drops on merge
        assert_eq!(r.get(&id).unwrap().grade, Grade::High);
    }

    #[test]
    fn after_cooldown_a_new_trigger_opens() {
        let mut r = router();
        r.route(Candidate::Outlier(candidate(10, 5.0)), Timestamp::from_seconds(600));
        let out = r.route(Candidate::Outlier(candidate(41, 5.0)), Timestamp::from_seconds(41 * 60));
        assert!(matches!(out, Routed::Created(_)));
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn low_grade_without_hits_is_suppressed() {
        let mut r = router();
        assert_eq!(
            r.route(Candidate::Outlier(candidate(10, 0.0)), Timestamp::from_seconds(600)),
            Routed::Suppressed
        );
        assert!(r.is_empty());
    }

    #[test]
    fn scheduler_candidate_is_routine_low() {
        let mut r = router();
        let plan = RoutinePlan {
            plan_id: PlanId::from("plan-1"),
            patient_id: PatientId::from("p1"),
            cadence: Cadence::Daily { at: LocalTime::hm(9, 0) },
            topic: Topic::Medication,
            last_fired: None,
            active_from: None,
        };
        let Routed::Created(id) = r.route(Candidate::Routine(plan), Timestamp::from_seconds(0)) else {
            panic!()
        };
        let t = r.get(&id).unwrap();
        assert_eq!((t.track, t.grade), (Track::Routine, Grade::Low));
        assert_eq!(t.plan_id, Some(PlanId::from("plan-1")));
    }
}
