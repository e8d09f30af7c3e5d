use vitaldx_core::adapter::Adapter;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::engine::{Engine, Input};
use vitaldx_core::ids::PatientId;
use vitaldx_core::time::Timestamp;
use vitaldx_core::vitals::{Channel, VitalSample};
use vitaldx_gateway::chain::{verify_chain, verify_text, ChainError, Entry, Head, GENESIS};
use vitaldx_gateway::replay::{render_reports, replay, replay_file};
use vitaldx_gateway::service::Service;

/// Head of the 100-record log below, computed independently with Python's
/// hashlib over `json.dumps(payload, sort_keys=True, separators=(',', ':'))`.
const HEAD_100: &str = "906e7b5677c0bca1342abd5c1b50008dbdd70cbf34d0ce984ecec6a9c9b720dd";

/// SHA-256 of `{"facts":[],"reports":{},"responses":{}}`.
const EMPTY_STATE: &str = "a91f32c701b58ab5e67dacd71af5aab3bd5d9260cc502ff991b882ac17c56e63";

const T0: i64 = 1_704_067_200;

fn synthetic(i: i64) -> Entry {
    let at = Timestamp::from_seconds(T0 + 60 * i);
    let input = match i % 3 {
        0 => Input::Ingest {
            samples: vec![VitalSample {
                patient_id: PatientId::from("p-oracle"),
                channel: Channel::HeartRate,
                timestamp: at,
                value: 60.0 + i as f64 / 2.0,
                device_id: "dev-1".into(),
            }],
        },
        1 => Input::Tick,
        _ => Input::Flush { patient_id: Some(PatientId::from("p-oracle")) },
    };
    Entry { at, input }
}

fn synthetic_log(n: i64) -> String {
    let mut head = Head::default();
    (0..n).map(|i| head.seal(&synthetic(i)).to_line() + "\n").collect()
}

#[test]
fn hundred_record_head_matches_oracle() {
    let text = synthetic_log(100);
    let (records, head) = verify_text(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 100);
    assert_eq!(head.digest, HEAD_100);
    assert_eq!(verify_chain(&records).unwrap(), HEAD_100);
}

#[test]
fn empty_log_is_valid_at_genesis() {
    let (records, head) = verify_text(b"").unwrap();
    assert!(records.is_empty());
    assert_eq!(head.digest, GENESIS);
    assert_eq!(verify_chain(&[]).unwrap(), GENESIS);
}

#[test]
fn empty_state_digest_is_fixed() {
    let engine = replay(&[], &EngineConfig::default()).unwrap();
    assert_eq!(engine.state_digest(), EMPTY_STATE);
}

#[test]
fn any_flipped_byte_is_caught_at_its_record() {
    let text = synthetic_log(12);
    let starts: Vec<usize> = std::iter::once(0)
        .chain(text.match_indices('\n').map(|(i, _)| i + 1))
        .filter(|&i| i < text.len())
        .collect();
    for (seq, &start) in starts.iter().enumerate() {
        let end = text[start..].find('\n').unwrap() + start;
        for pos in start..end {
            let mut bytes = text.clone().into_bytes();
            bytes[pos] ^= 0x01;
            match verify_text(&bytes) {
                Err(ChainError::InvalidChain { seq: got, .. }) => assert_eq!(got, seq as u64, "byte {pos}"),
                Ok(_) => panic!("flip at byte {pos} (seq {seq}) went unnoticed"),
            }
        }
    }
}

#[test]
fn payload_flip_at_seq_five() {
    let text = synthetic_log(10);
    let line_start = text.match_indices('\n').nth(4).unwrap().0 + 1;
    let payload = text[line_start..].find("\"payload\"").unwrap() + line_start;
    let target = text[payload..].find("flush").unwrap() + payload;
    let mut bytes = text.into_bytes();
    bytes[target] = b'F';
    assert_eq!(verify_text(&bytes).unwrap_err().seq(), 5);
}

#[test]
fn restart_reaches_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.ndjson");
    let config = EngineConfig::default();
    let live = {
        let mut service = Service::on_log(config.clone(), Adapter::mock(), &path, 16).unwrap();
        for i in 0..40 {
            let e = synthetic(i);
            service.submit(e.input, e.at).unwrap();
        }
        // a refused input is not logged
        assert!(service.submit(Input::Tick, Timestamp::from_seconds(T0)).is_ok());
        let bad = VitalSample {
            patient_id: PatientId::from("p-oracle"),
            channel: Channel::Spo2,
            timestamp: Timestamp::from_seconds(T0 + 4000),
            value: 140.0,
            device_id: "dev-1".into(),
        };
        assert!(service
            .submit(Input::Ingest { samples: vec![bad] }, Timestamp::from_seconds(T0 + 4000))
            .is_err());
        (service.engine().state_digest(), service.head().clone(), render_reports(service.engine()))
    };
    assert_eq!(live.1.next_seq, 41);
    let reopened = Service::on_log(config.clone(), Adapter::mock(), &path, 16).unwrap();
    assert_eq!(reopened.engine().state_digest(), live.0);
    assert_eq!(reopened.head(), &live.1);
    let first = replay_file(&path, &config).unwrap();
    let second = replay_file(&path, &config).unwrap();
    assert_eq!(first.engine.state_digest(), live.0);
    assert_eq!(second.engine.state_digest(), live.0);
    assert_eq!(render_reports(&first.engine), live.2);
}

#[test]
fn engine_and_log_agree_on_clock() {
    let mut engine = Engine::new(EngineConfig::default(), Adapter::mock());
    let mut head = Head::default();
    let mut records = Vec::new();
    for i in 0..30 {
        let e = synthetic(i);
        engine.apply(&e.input, e.at).unwrap();
        records.push(head.seal(&e));
    }
    let replayed = replay(&records, &EngineConfig::default()).unwrap();
    assert_eq!(replayed.clock(), engine.clock());
    assert_eq!(replayed.state_digest(), engine.state_digest());
}
