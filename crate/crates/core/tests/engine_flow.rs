use std::collections::BTreeMap;

use vitaldx_core::adapter::Adapter;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::coordinator::{find_leak, Audience, ReportKind};
use vitaldx_core::decision::{ActorRole, ApprovalState, Tier, VerdictKind};
use vitaldx_core::engine::{Engine, EngineError, Input};
use vitaldx_core::ids::{ActorId, PatientId, PlanId};
use vitaldx_core::inquiry::{NextQuestion, SessionStatus};
use vitaldx_core::simulator::{synth_stream, AnomalyScript, ChannelProfile, Episode, PatientProfile};
use vitaldx_core::time::Timestamp;
use vitaldx_core::triggers::{Cadence, Grade, LocalTime, PlanSpec, Topic, Track};
use vitaldx_core::vitals::{Channel, VitalSample};

fn profile() -> PatientProfile {
    let mut channels = BTreeMap::new();
    channels.insert(Channel::Spo2, ChannelProfile { mean: 97.0, spread: 0.6, circadian_amplitude: 0.0 });
    channels.insert(Channel::HeartRate, ChannelProfile { mean: 68.0, spread: 3.0, circadian_amplitude: 4.0 });
    serde_json::from_value(serde_json::json!({
        "patient_id": "p1",
        "channels": channels,
        "answers": [
            {"slot": "symptom_present", "text": "yes, a bit short of breath"},
            {"slot": "severity", "text": "about a 4"},
            {"slot": "onset", "text": "around noon"},
            {"slot": "context", "text": "climbing stairs"}
        ]
    }))
    .unwrap()
}

fn dip() -> AnomalyScript {
    AnomalyScript {
        episodes: vec![Episode {
            channel: Channel::Spo2,
            start_seconds: 3.0 * 3600.0,
            duration_seconds: 600.0,
            level: Some(85.0),
            delta: None,
            ramp_seconds: 30.0,
        }],
    }
}

fn feed(engine: &mut Engine, samples: &[VitalSample], batch: usize) {
    for chunk in samples.chunks(batch) {
        let at = chunk.last().unwrap().timestamp;
        engine.apply(&Input::Ingest { samples: chunk.to_vec() }, at).unwrap();
    }
}

fn p1() -> PatientId {
    PatientId::from("p1")
}

#[test]
fn outlier_trigger_to_released_report() {
    let profile = profile();
    let samples = synth_stream(&profile, &dip(), 4.0 * 3600.0, 7).unwrap();
    let mut engine = Engine::new(EngineConfig::default(), Adapter::mock());
    feed(&mut engine, &samples, 120);

    let triggers: Vec<_> = engine.triggers().collect();
    assert_eq!(triggers.len(), 1, "{triggers:?}");
    let trigger = triggers[0].clone();
    assert_eq!(trigger.track, Track::Outlier);
    assert_eq!(trigger.channel, Some(Channel::Spo2));
    assert_eq!(trigger.grade, Grade::High);

    let session_id = engine.session_for(&trigger.trigger_id).unwrap().session_id.clone();
    let mut at = trigger.created_at;
    while let Some(NextQuestion::Ask { question }) = engine.current_question(&session_id) {
        at = at.plus_seconds(20.0);
        let text = vitaldx_core::simulator::scripted_answer(&profile, Track::Outlier, question.slot.name());
        engine.apply(&Input::Answer { session_id: session_id.clone(), text }, at).unwrap();
    }
    assert_eq!(engine.session(&session_id).unwrap().status, SessionStatus::Complete);

    let response = engine.response_for(&trigger.trigger_id).unwrap().clone();
    assert_eq!(response.triage_tier, Tier::ContactClinician);
    assert_eq!(response.state(), ApprovalState::PendingReview);
    assert!(engine.reports_for(&p1(), Audience::Patient).is_empty());
    assert_eq!(engine.review_queue().len(), 1);
    assert!(engine.clinician_report(&response.response_id).unwrap().flagged);

    let err = engine
        .apply(
            &Input::Verdict {
                response_id: response.response_id.clone(),
                actor: ActorId::from("p1"),
                role: ActorRole::Patient,
                verdict: VerdictKind::Approve,
                note: None,
                share_note: false,
            },
            at,
        )
        .unwrap_err();
    assert_eq!(err.code(), "UnauthorizedActor");

    engine
        .apply(
            &Input::Verdict {
                response_id: response.response_id.clone(),
                actor: ActorId::from("dr-lee"),
                role: ActorRole::Clinician,
                verdict: VerdictKind::Approve,
                note: Some("please rest today".into()),
                share_note: true,
            },
            at.plus_seconds(60.0),
        )
        .unwrap();
    let reports = engine.reports_for(&p1(), Audience::Patient);
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].kind, ReportKind::Guidance);
    let json = serde_json::to_string(reports[0]).unwrap();
    let scores: Vec<f64> = trigger.evidence.iter().map(|e| e.score).collect();
    assert_eq!(find_leak(&json, &engine.config().coordinator.visibility, &scores), None);
    assert!(json.contains("please rest today"));
    assert!(!engine.clinician_report(&response.response_id).unwrap().flagged);
    assert!(engine.review_queue().is_empty());
    // the approved assertion became a fact
    assert!(engine.memory().facts_for(&p1()).any(|f| f.statement.subject.contains("episode")));
    engine.memory().audit().unwrap();
}

#[test]
fn rejected_batch_is_atomic() {
    let mut engine = Engine::new(EngineConfig::default(), Adapter::mock());
    let t0 = Timestamp::from_seconds(1_000);
    let sample = |s: i64, v: f64| VitalSample {
        patient_id: p1(),
        channel: Channel::HeartRate,
        timestamp: Timestamp::from_seconds(s),
        value: v,
        device_id: "dev-1".into(),
    };
    let err =
        engine.apply(&Input::Ingest { samples: vec![sample(1, 70.0), sample(2, 900.0)] }, t0).unwrap_err();
    assert!(matches!(err, EngineError::RejectedSample { index: 1, .. }));
    assert_eq!(err.field().as_deref(), Some("samples[1].value"));
    assert!(engine.patient(&p1()).is_none());
    assert_eq!(engine.ingest_state().open_sample_count(), 0);
    let err =
        engine.apply(&Input::Ingest { samples: vec![sample(5, 70.0), sample(5, 71.0)] }, t0).unwrap_err();
    assert_eq!(err.code(), "OutOfOrderTimestamp");
    engine.apply(&Input::Ingest { samples: vec![sample(5, 70.0)] }, t0).unwrap();
    assert_eq!(engine.ingest_state().open_sample_count(), 1);
}

fn routine_engine(deferral_hours: f64) -> Engine {
    let mut config = EngineConfig::default();
    config.decision.deferral_hours = deferral_hours;
    let mut engine = Engine::new(config, Adapter::mock());
    let start = Timestamp::parse_rfc3339("2024-01-01T00:00:00Z").unwrap();
    engine
        .apply(
            &Input::RegisterPatient {
                patient_id: p1(),
                utc_offset_minutes: 0,
                plans: vec![PlanSpec {
                    plan_id: PlanId::from("meds-am"),
                    cadence: Cadence::Daily { at: LocalTime::hm(9, 0) },
                    topic: Topic::Medication,
                }],
            },
            start,
        )
        .unwrap();
    engine
}

#[test]
fn week_of_routine_checkins_reaches_the_digest() {
    let mut engine = routine_engine(1.0);
    let start = Timestamp::parse_rfc3339("2024-01-01T00:00:00Z").unwrap();
    let answers = ["yes", "partially", "yes", "no", "yes", "yes", "partially"];
    for (day, answer) in answers.iter().copied().enumerate() {
        let at = start.plus_seconds(day as f64 * 86_400.0 + 9.0 * 3600.0);
        engine.apply(&Input::Tick, at).unwrap();
        let session = engine.sessions().find(|s| s.status == SessionStatus::Open).unwrap().session_id.clone();
        let mut t = at;
        let mut first = true;
        while let Some(NextQuestion::Ask { .. }) = engine.current_question(&session) {
            t = t.plus_seconds(30.0);
            let text = if first { answer } else { "none" };
            first = false;
            engine.apply(&Input::Answer { session_id: session.clone(), text: text.into() }, t).unwrap();
        }
        engine.apply(&Input::Tick, at.plus_seconds(2.0 * 3600.0)).unwrap();
    }
    engine.apply(&Input::Tick, start.plus_seconds(7.0 * 86_400.0)).unwrap();
    assert_eq!(engine.triggers().count(), 7);
    let digests = engine.digests_for(&p1());
    assert_eq!(digests.len(), 1);
    let d = digests[0];
    assert_eq!(d.entries.len(), 7);
    assert_eq!((d.stats.adherent, d.stats.partial, d.stats.non_adherent), (4, 2, 1));
    assert_eq!(engine.reports_for(&p1(), Audience::Patient).len(), 7);

    engine
        .apply(
            &Input::ConfirmDigest {
                digest_id: d.digest_id.clone(),
                actor: "dr-lee".into(),
                role: ActorRole::Clinician,
            },
            start.plus_seconds(7.0 * 86_400.0 + 60.0),
        )
        .unwrap();
}

#[test]
fn same_inputs_same_digest() {
    let run = || {
        let profile = profile();
        let samples = synth_stream(&profile, &dip(), 4.0 * 3600.0, 11).unwrap();
        let mut engine = Engine::new(EngineConfig::default(), Adapter::mock());
        feed(&mut engine, &samples, 300);
        let end = samples.last().unwrap().timestamp;
        engine.apply(&Input::Tick, end.plus_seconds(3600.0)).unwrap();
        engine.state_digest()
    };
    assert_eq!(run(), run());
}

#[test]
fn abandoned_session_still_gets_a_response() {
    let mut engine = routine_engine(24.0);
    let start = Timestamp::parse_rfc3339("2024-01-01T09:00:00Z").unwrap();
    engine.apply(&Input::Tick, start).unwrap();
    let session = engine.sessions().next().unwrap().session_id.clone();
    engine.apply(&Input::Tick, start.plus_seconds(31.0 * 60.0)).unwrap();
    assert_eq!(engine.session(&session).unwrap().status, SessionStatus::Abandoned);
    let r = engine.responses().next().unwrap();
    assert!(matches!(r.state(), ApprovalState::Deferred { .. }));
    let err = engine
        .apply(&Input::Answer { session_id: session, text: "yes".into() }, start.plus_seconds(32.0 * 60.0))
        .unwrap_err();
    assert_eq!(err.code(), "SessionClosed");
}
