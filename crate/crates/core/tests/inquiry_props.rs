use proptest::prelude::*;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::ids::{PatientId, PlanId, SessionId, TriggerId};
use vitaldx_core::inquiry::{InquiryConfig, InquirySession, NextQuestion, SessionStatus, SlotSource};
use vitaldx_core::memory::ContextBundle;
use vitaldx_core::time::{Span, Timestamp};
use vitaldx_core::triggers::{Grade, Topic, Track, TriggerEvent, TriggerSource};
use vitaldx_core::vitals::Channel;

const ANSWERS: &[&str] = &[
    "yes",
    "no",
    "partially",
    "about a 7",
    "11 out of 10",
    "this morning",
    "climbing stairs",
    "none",
    "",
    "   ",
    "???",
    "hmm not sure",
    "chest pain",
];

fn trigger(track: Track) -> TriggerEvent {
    TriggerEvent {
        trigger_id: TriggerId::from("trg-p-0001"),
        patient_id: PatientId::from("p"),
        track,
        grade: Grade::Medium,
        source: match track {
            Track::Outlier => TriggerSource::Statistical { score: 3.0 },
            Track::Routine => TriggerSource::Schedule { plan_id: PlanId::from("plan") },
        },
        channel: (track == Track::Outlier).then_some(Channel::HeartRate),
        topic: (track == Track::Routine).then_some(Topic::Exercise),
        plan_id: None,
        evidence: Vec::new(),
        created_at: Timestamp::from_seconds(0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dialogue_terminates_and_settles_correctly(
        outlier in any::<bool>(),
        max_turns in 1usize..10,
        picks in prop::collection::vec(0usize..ANSWERS.len(), 0..30),
        idle_at in prop::option::of(0usize..12),
    ) {
        let track = if outlier { Track::Outlier } else { Track::Routine };
        let config = InquiryConfig { max_turns, ..InquiryConfig::default() };
        let adapter = Adapter::mock();
        let ctx = ContextBundle::empty(PatientId::from("p"), Timestamp::from_seconds(0));
        let mut s = InquirySession::open(SessionId::from("s"), &trigger(track), &ctx, &config, Timestamp::from_seconds(0));
        let mut t = Timestamp::from_seconds(0);
        let mut history: Vec<InquirySession> = Vec::new();
        let mut answers = picks.iter().cycle();
        let mut steps = 0;
        loop {
            steps += 1;
            prop_assert!(steps <= max_turns + 2, "did not terminate");
            if idle_at == Some(s.turns.len()) {
                t = t.plus_seconds(config.session_timeout_minutes * 60.0);
                let was_open = s.status == SessionStatus::Open;
                prop_assert_eq!(s.abandon_if_idle(t, config.timeout()), was_open);
            }
            t = t.plus_seconds(10.0);
            match s.next_question(&adapter, t).unwrap() {
                NextQuestion::Done { status } => {
                    prop_assert_eq!(status, s.status);
                    break;
                }
                NextQuestion::Ask { question } => {
                    prop_assert!(s.slots.iter().any(|st| st.slot == question.slot && st.value.is_none()));
                    let answer = match answers.next() {
                        Some(&i) => ANSWERS[i],
                        None => "",
                    };
                    history.push(s.clone());
                    s.record_answer(answer, t).unwrap();
                }
            }
        }
        prop_assert!(s.status.is_terminal());
        prop_assert!(s.turns.len() <= max_turns);
        prop_assert_eq!(s.status == SessionStatus::Complete, s.all_filled() && s.status != SessionStatus::Abandoned);
        if s.status == SessionStatus::Exhausted {
            prop_assert_eq!(s.turns.len(), max_turns);
            prop_assert!(!s.all_filled());
        }
        // turns only grow, and a filled slot never changes afterwards
        for earlier in &history {
            prop_assert_eq!(&s.turns[..earlier.turns.len()], &earlier.turns[..]);
            for (a, b) in earlier.slots.iter().zip(&s.slots) {
                if a.value.is_some() {
                    prop_assert_eq!(&a.value, &b.value);
                }
            }
        }
        for st in &s.slots {
            if let Some(v) = &st.value {
                let SlotSource::Turn { turn } = v.source else { panic!("no facts in context") };
                prop_assert!(s.turns[turn].filled && s.turns[turn].slot == st.slot);
            }
        }
        // a closed session refuses further answers and keeps its outcome stable
        prop_assert!(s.record_answer("yes", t).is_err());
        let outcome = s.summarize(&config).unwrap();
        prop_assert_eq!(outcome.filled.len() + outcome.unanswered.len(), s.slots.len());
        prop_assert_eq!(s.summarize(&config).unwrap(), outcome);
    }

    #[test]
    fn idle_sessions_abandon_only_after_timeout(gap_s in 0i64..4000) {
        let config = InquiryConfig::default();
        let ctx = ContextBundle::empty(PatientId::from("p"), Timestamp::from_seconds(0));
        let mut s = InquirySession::open(SessionId::from("s"), &trigger(Track::Outlier), &ctx, &config, Timestamp::from_seconds(0));
        let abandoned = s.abandon_if_idle(Timestamp::from_seconds(gap_s), config.timeout());
        prop_assert_eq!(abandoned, Span::from_secs_f64(gap_s as f64) >= config.timeout());
    }
}
