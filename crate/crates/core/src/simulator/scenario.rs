//! Drives a full run against anything that accepts engine inputs: a bare
//! engine in tests, the logged service in the gateway.
//!
//! Time advances in fixed steps. Each step ingests the samples that fall
//! inside it, ticks at its end, then lets the scripted patient answer and
//! the scripted clinician rule on whatever is waiting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    scripted_answer, synth_stream, AnomalyScript, AnswerRule, ChannelProfile, Episode, Lcg, PatientProfile,
    SimError,
};
use crate::decision::{ActorRole, ApprovalState, VerdictKind};
use crate::engine::{Applied, Engine, EngineError, Input};
use crate::ids::{ActorId, PlanId, ResponseId, SessionId};
use crate::inquiry::NextQuestion;
use crate::memory::RetrainJobDescriptor;
use crate::time::Timestamp;
use crate::triggers::{Cadence, LocalTime, PlanSpec, Topic};
use crate::vitals::Channel;

/// Why a pipeline did not accept an input. A fatal refusal ends the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refusal {
    pub code: String,
    pub message: String,
    pub fatal: bool,
}

impl From<EngineError> for Refusal {
    fn from(e: EngineError) -> Self {
        Self { code: e.code().to_string(), message: e.to_string(), fatal: false }
    }
}

/// Anything that applies engine inputs and exposes the resulting state.
pub trait Pipeline {
    fn submit(&mut self, input: Input, at: Timestamp) -> Result<Applied, Refusal>;
    fn engine(&self) -> &Engine;
}

impl Pipeline for Engine {
    fn submit(&mut self, input: Input, at: Timestamp) -> Result<Applied, Refusal> {
        Ok(self.apply(&input, at)?)
    }

    fn engine(&self) -> &Engine {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClinicianPolicy {
    pub approve_probability: f64,
    pub reject_probability: f64,
    pub delay_seconds: f64,
    pub actor: ActorId,
}

impl Default for ClinicianPolicy {
    fn default() -> Self {
        Self {
            approve_probability: 1.0,
            reject_probability: 0.0,
            delay_seconds: 600.0,
            actor: ActorId::from("clinician-1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub profile: PatientProfile,
    #[serde(default)]
    pub script: AnomalyScript,
    pub duration_seconds: f64,
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step_seconds: f64,
    #[serde(default = "default_answer_delay")]
    pub answer_delay_seconds: f64,
    /// Chance the patient ignores a session entirely.
    #[serde(default)]
    pub ignore_probability: f64,
    #[serde(default)]
    pub clinician: ClinicianPolicy,
    /// Quiet time simulated after the last sample, so deferrals and digests
    /// can come due.
    #[serde(default)]
    pub settle_seconds: f64,
}

fn default_step() -> f64 {
    60.0
}

fn default_answer_delay() -> f64 {
    15.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub samples: usize,
    pub inputs: usize,
    /// Inputs the pipeline refused, by error code.
    pub refused: BTreeMap<String, usize>,
    pub descriptors: Vec<RetrainJobDescriptor>,
    pub end: Timestamp,
}

#[derive(Default)]
struct Actors {
    ignored: BTreeSet<SessionId>,
    planned: BTreeMap<ResponseId, Option<(Timestamp, VerdictKind)>>,
}

fn note(summary: &mut RunSummary, result: Result<Applied, Refusal>) -> Result<(), SimError> {
    summary.inputs += 1;
    match result {
        Ok(applied) => summary.descriptors.extend(applied.descriptors),
        Err(r) if r.fatal => return Err(SimError::Pipeline(format!("{}: {}", r.code, r.message))),
        Err(r) => *summary.refused.entry(r.code).or_insert(0) += 1,
    }
    Ok(())
}

/// Runs the scenario to completion and summarizes what was submitted.
pub fn run_scenario(pipeline: &mut dyn Pipeline, spec: &ScenarioSpec) -> Result<RunSummary, SimError> {
    let samples = synth_stream(&spec.profile, &spec.script, spec.duration_seconds, spec.seed)?;
    let profile = &spec.profile;
    let start = profile.start;
    let end = start.plus_seconds(spec.duration_seconds + spec.settle_seconds);
    let mut rng = Lcg::new(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut actors = Actors::default();
    let mut summary = RunSummary { samples: samples.len(), ..RunSummary::default() };

    if pipeline.engine().patient(&profile.patient_id).is_none() {
        let input = Input::RegisterPatient {
            patient_id: profile.patient_id.clone(),
            utc_offset_minutes: profile.utc_offset_minutes,
            plans: profile.plans.clone(),
        };
        note(&mut summary, pipeline.submit(input, start))?;
    }

    let mut next = 0;
    let mut t = start;
    while t < end {
        let step_end = t.plus_seconds(spec.step_seconds).min(end);
        let upto = next + samples[next..].partition_point(|s| s.timestamp < step_end);
        if upto > next {
            let batch = samples[next..upto].to_vec();
            let at = batch.last().expect("non-empty batch").timestamp;
            note(&mut summary, pipeline.submit(Input::Ingest { samples: batch }, at))?;
            next = upto;
        }
        note(&mut summary, pipeline.submit(Input::Tick, step_end))?;
        let mut now = step_end;
        patient_turns(pipeline, spec, &mut rng, &mut actors, &mut summary, &mut now)?;
        clinician_turns(pipeline, spec, &mut rng, &mut actors, &mut summary, now)?;
        t = step_end;
    }
    summary.end = end;
    Ok(summary)
}

fn patient_turns(
    pipeline: &mut dyn Pipeline,
    spec: &ScenarioSpec,
    rng: &mut Lcg,
    actors: &mut Actors,
    summary: &mut RunSummary,
    now: &mut Timestamp,
) -> Result<(), SimError> {
    let open: Vec<SessionId> = pipeline
        .engine()
        .sessions()
        .filter(|s| s.patient_id == spec.profile.patient_id && !s.status.is_terminal())
        .map(|s| s.session_id.clone())
        .collect();
    for id in open {
        if actors.ignored.contains(&id) {
            continue;
        }
        let fresh = pipeline.engine().session(&id).is_some_and(|s| s.turns.is_empty());
        if fresh && rng.next_unit() < spec.ignore_probability {
            actors.ignored.insert(id);
            continue;
        }
        while let Some(NextQuestion::Ask { question }) = pipeline.engine().current_question(&id) {
            let track = pipeline.engine().session(&id).expect("listed session").track;
            let text = scripted_answer(&spec.profile, track, question.slot.name());
            *now = now.plus_seconds(spec.answer_delay_seconds);
            note(summary, pipeline.submit(Input::Answer { session_id: id.clone(), text }, *now))?;
        }
    }
    Ok(())
}

fn clinician_turns(
    pipeline: &mut dyn Pipeline,
    spec: &ScenarioSpec,
    rng: &mut Lcg,
    actors: &mut Actors,
    summary: &mut RunSummary,
    now: Timestamp,
) -> Result<(), SimError> {
    let policy = &spec.clinician;
    let waiting: Vec<(ResponseId, Timestamp)> = pipeline
        .engine()
        .responses()
        .filter(|r| !r.state().is_terminal())
        .map(|r| (r.response_id.clone(), r.created_at))
        .collect();
    for (id, created) in waiting {
        let plan = actors.planned.entry(id.clone()).or_insert_with(|| {
            let u = rng.next_unit();
            let kind = if u < policy.approve_probability {
                Some(VerdictKind::Approve)
            } else if u < policy.approve_probability + policy.reject_probability {
                Some(VerdictKind::Reject)
            } else {
                None
            };
            kind.map(|k| (created.plus_seconds(policy.delay_seconds), k))
        });
        let Some((due, verdict)) = *plan else {
            continue;
        };
        if due > now {
            continue;
        }
        // low-risk responses are left to their deferral unless rejected
        let deferred = matches!(
            pipeline.engine().response(&id).map(|r| r.state()),
            Some(ApprovalState::Deferred { .. })
        );
        if deferred && verdict == VerdictKind::Approve {
            continue;
        }
        let input = Input::Verdict {
            response_id: id.clone(),
            actor: policy.actor.clone(),
            role: ActorRole::Clinician,
            verdict,
            note: Some("reviewed".into()),
            share_note: false,
        };
        note(summary, pipeline.submit(input, now))?;
        actors.planned.insert(id, None);
    }
    Ok(())
}

fn pick<'a, T>(rng: &mut Lcg, items: &'a [T]) -> &'a T {
    &items[(rng.next_u64() % items.len() as u64) as usize]
}

/// A randomized single-patient scenario: one or two vitals channels, up to
/// two anomaly episodes, maybe a daily plan, and a patient whose answers
/// range from clear to unparseable.
pub fn random_spec(seed: u64) -> ScenarioSpec {
    let mut rng = Lcg::new(seed);
    let mut channels = BTreeMap::new();
    channels.insert(
        Channel::HeartRate,
        ChannelProfile {
            mean: 60.0 + 20.0 * rng.next_unit(),
            spread: 1.0 + 4.0 * rng.next_unit(),
            circadian_amplitude: 5.0 * rng.next_unit(),
        },
    );
    if rng.next_unit() < 0.7 {
        channels.insert(
            Channel::Spo2,
            ChannelProfile {
                mean: 95.0 + 3.0 * rng.next_unit(),
                spread: 0.2 + 0.8 * rng.next_unit(),
                circadian_amplitude: 0.0,
            },
        );
    }
    let duration_seconds = 6.0 * 3600.0;
    let mut episodes = Vec::new();
    for slot in 0..2 {
        if rng.next_unit() < 0.6 {
            let channel = *pick(&mut rng, &channels.keys().copied().collect::<Vec<_>>());
            // two disjoint halves of the run keep episodes from overlapping
            let start_seconds = (slot as f64 + 0.3 + 0.4 * rng.next_unit()) * duration_seconds / 2.0;
            let (level, delta) = match channel {
                Channel::Spo2 => (Some(*pick(&mut rng, &[84.0, 88.0, 92.0])), None),
                _ => (None, Some(*pick(&mut rng, &[-30.0, 25.0, 45.0, 70.0]))),
            };
            episodes.push(Episode {
                channel,
                start_seconds: start_seconds.floor(),
                duration_seconds: 120.0 + (900.0 * rng.next_unit()).floor(),
                level,
                delta,
                ramp_seconds: 30.0 * rng.next_unit(),
            });
        }
    }
    let plans = if rng.next_unit() < 0.5 {
        vec![PlanSpec {
            plan_id: PlanId::from("daily"),
            cadence: Cadence::Daily { at: LocalTime::hm(2 + (rng.next_u64() % 3) as u32, 0) },
            topic: *pick(&mut rng, &[Topic::Medication, Topic::Exercise, Topic::Diet, Topic::SymptomDiary]),
        }]
    } else {
        Vec::new()
    };
    let pools: [(&str, &[&str]); 7] = [
        ("symptom_present", &["yes", "no", "I fainted earlier", "not sure really", "yes, chest pain"]),
        ("severity", &["3", "about a 9", "ten", "it's fine", "6 out of 10"]),
        ("onset", &["this morning", "", "an hour ago"]),
        ("context", &["walking the dog", "", "started a new pill"]),
        ("adherent", &["yes", "no", "partially", "kind of", "mostly"]),
        ("barriers", &["none", "forgot the evening dose", ""]),
        ("side_effects", &["no", "yes", "dizzy maybe"]),
    ];
    let answers = pools
        .iter()
        .map(|(slot, texts)| AnswerRule {
            slot: (*slot).into(),
            track: None,
            text: (*pick(&mut rng, texts)).into(),
        })
        .collect();
    let profile = PatientProfile {
        patient_id: format!("p{}", seed % 1000).as_str().into(),
        device_id: "dev-1".into(),
        utc_offset_minutes: *pick(&mut rng, &[0, 60, -300, 330]),
        start: Timestamp::parse_rfc3339("2024-01-01T00:00:00Z").expect("valid constant"),
        sample_interval_seconds: 5.0,
        channels,
        plans,
        answers,
        unparseable_filler: "hmm, not sure".into(),
    };
    ScenarioSpec {
        profile,
        script: AnomalyScript { episodes },
        duration_seconds,
        seed,
        step_seconds: 60.0,
        answer_delay_seconds: 10.0 + 20.0 * rng.next_unit(),
        ignore_probability: 0.2,
        clinician: ClinicianPolicy {
            approve_probability: 0.5,
            reject_probability: 0.3,
            delay_seconds: 60.0 + 3600.0 * rng.next_unit(),
            actor: ActorId::from("clinician-1"),
        },
        settle_seconds: 30.0 * 3600.0,
    }
}
