use proptest::prelude::*;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::ids::{PatientId, SegmentId};
use vitaldx_core::time::Timestamp;
use vitaldx_core::vitals::{
    compute_stats, interpret_segment, Channel, ClosedReason, IngestState, SamplePoint, SegmentationPolicy,
    VitalSample, VitalSegment, VitalsConfig,
};

/// Brute-force statistics: sort for order statistics, two passes for the slope.
fn oracle(samples: &[(f64, f64)]) -> [f64; 6] {
    let n = samples.len() as f64;
    let mut ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mean = ys.iter().sum::<f64>() / n;
    ys.sort_by(f64::total_cmp);
    let mid = |v: &[f64]| {
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            (v[k / 2 - 1] + v[k / 2]) / 2.0
        }
    };
    let median = mid(&ys);
    let mut dev: Vec<f64> = ys.iter().map(|y| (y - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = mid(&dev);
    let x0 = samples[0].0;
    let xbar = samples.iter().map(|s| s.0 - x0).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in samples {
        num += (x - x0 - xbar) * (y - mean);
        den += (x - x0 - xbar).powi(2);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    [mean, ys[0], ys[ys.len() - 1], median, mad, slope]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn segment_of(points: &[(f64, f64)]) -> VitalSegment {
    let samples: Vec<SamplePoint> = points
        .iter()
        .map(|&(x, y)| SamplePoint {
            timestamp: Timestamp::from_millis((x * 1000.0).round() as i64),
            value: y,
        })
        .collect();
    VitalSegment {
        segment_id: SegmentId::from("s"),
        patient_id: PatientId::from("p"),
        channel: Channel::HeartRate,
        start: samples[0].timestamp,
        end: samples[samples.len() - 1].timestamp,
        samples,
        closed_reason: ClosedReason::Flush,
    }
}

fn series() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((1u32..5000, 30.0f64..200.0), 1..300).prop_map(|steps| {
        let mut t = 0u64;
        steps
            .into_iter()
            .map(|(dt, v)| {
                t += dt as u64;
                (t as f64 / 1000.0, (v * 10.0).round() / 10.0)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn stats_match_brute_force(points in series()) {
        let seg = segment_of(&points);
        let s = compute_stats(&seg).unwrap();
        let o = oracle(&points);
        let got = [s.mean, s.min, s.max, s.median, s.mad, s.slope];
        for (g, e) in got.iter().zip(o) {
            prop_assert!(close(*g, e), "got {got:?} want {o:?}");
        }
        prop_assert!(s.min <= s.median && s.median <= s.max && s.mad >= 0.0);
        prop_assert_eq!(s.sample_count, points.len());
        // recomputation is exact
        prop_assert_eq!(compute_stats(&seg).unwrap(), s);
    }
}

fn stream() -> impl Strategy<Value = Vec<(u8, u32, f64)>> {
    // (channel pick, millis since previous sample on any stream, value)
    prop::collection::vec((0u8..2, 200u32..120_000, 50.0f64..100.0), 1..400)
}

fn run(stream: &[(u8, u32, f64)], polls: &[u32]) -> Vec<VitalSegment> {
    let config = VitalsConfig::default();
    let mut state = IngestState::new(SegmentationPolicy::default());
    let mut closed = Vec::new();
    let mut t = 0i64;
    for (i, &(c, dt, v)) in stream.iter().enumerate() {
        t += dt as i64;
        let channel = if c == 0 { Channel::HeartRate } else { Channel::Spo2 };
        let sample = VitalSample {
            patient_id: PatientId::from("p"),
            channel,
            timestamp: Timestamp::from_millis(t),
            value: v,
            device_id: "d".into(),
        };
        state.ingest(&sample, &config).unwrap();
        if polls.contains(&(i as u32)) {
            closed.extend(state.segment_stream(Timestamp::from_millis(t + 30_000)));
        }
    }
    closed.extend(state.segment_stream(Timestamp::from_millis(t)));
    closed
}

proptest! {
    #[test]
    fn segmentation_is_a_partition(stream in stream(), polls in prop::collection::vec(0u32..400, 0..20)) {
        let config = VitalsConfig::default();
        let mut t = 0i64;
        let mut want: Vec<(Channel, i64, f64)> = Vec::new();
        for &(c, dt, v) in &stream {
            t += dt as i64;
            want.push((if c == 0 { Channel::HeartRate } else { Channel::Spo2 }, t, v));
        }
        let mut state = IngestState::new(SegmentationPolicy::default());
        // closed segments plus whatever is still open, per channel
        let mut got_closed = Vec::new();
        let mut t = 0i64;
        for (i, &(c, dt, v)) in stream.iter().enumerate() {
            t += dt as i64;
            let channel = if c == 0 { Channel::HeartRate } else { Channel::Spo2 };
            state
                .ingest(&VitalSample { patient_id: "p".into(), channel, timestamp: Timestamp::from_millis(t), value: v, device_id: "d".into() }, &config)
                .unwrap();
            if polls.contains(&(i as u32)) {
                got_closed.extend(state.segment_stream(Timestamp::from_millis(t + 30_000)));
            }
        }
        got_closed.extend(state.segment_stream(Timestamp::from_millis(t)));
        for channel in [Channel::HeartRate, Channel::Spo2] {
            let mut got: Vec<(i64, f64)> = got_closed
                .iter()
                .filter(|s| s.channel == channel)
                .flat_map(|s| s.samples.iter().map(|p| (p.timestamp.as_millis(), p.value)))
                .collect();
            got.extend(state.open_samples(&"p".into(), channel).iter().map(|p| (p.timestamp.as_millis(), p.value)));
            let expected: Vec<(i64, f64)> = want.iter().filter(|w| w.0 == channel).map(|w| (w.1, w.2)).collect();
            prop_assert_eq!(got, expected);
        }
        let policy = SegmentationPolicy::default();
        for seg in &got_closed {
            prop_assert!(!seg.samples.is_empty());
            prop_assert!(seg.duration_seconds() < policy.max_segment_seconds);
            prop_assert!(seg.samples.windows(2).all(|w| (w[1].timestamp - w[0].timestamp).as_secs_f64() < policy.gap_threshold_seconds));
        }
    }

    #[test]
    fn segmentation_is_deterministic(stream in stream(), polls in prop::collection::vec(0u32..400, 0..20)) {
        let a = serde_json::to_string(&run(&stream, &polls)).unwrap();
        let b = serde_json::to_string(&run(&stream, &polls)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mock_narratives_are_pure(points in series()) {
        let seg = segment_of(&points);
        let stats = compute_stats(&seg).unwrap();
        let policy = VitalsConfig::default().policy(Channel::HeartRate);
        let a = interpret_segment(&seg, &stats, &policy, &Adapter::mock()).unwrap();
        let b = interpret_segment(&seg, &stats, &policy, &Adapter::mock()).unwrap();
        prop_assert!(!a.text.is_empty());
        prop_assert_eq!(a, b);
    }
}
