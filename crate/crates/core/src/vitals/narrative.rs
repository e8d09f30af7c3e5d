use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChannelPolicy, SegmentStats, VitalSegment};
use crate::adapter::{Adapter, AdapterError, GenerationRequest, Generator, Task};
use crate::ids::SegmentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendDirection {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcursionSide {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Trend {
        direction: TrendDirection,
        slope: f64,
    },
    /// The segment's extremum crossed a soft bound.
    Excursion {
        side: ExcursionSide,
        bound: f64,
        extreme: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub segment_id: SegmentId,
    pub text: String,
    pub features: Vec<Feature>,
    pub generator: Generator,
    pub degraded: bool,
}

pub fn detect_features(stats: &SegmentStats, policy: &ChannelPolicy) -> Vec<Feature> {
    let mut features = Vec::new();
    if stats.slope.abs() > policy.trend_threshold {
        let direction =
            if stats.slope > 0.0 { TrendDirection::Increasing } else { TrendDirection::Decreasing };
        features.push(Feature::Trend { direction, slope: stats.slope });
    }
    if stats.max > policy.soft_max {
        features.push(Feature::Excursion {
            side: ExcursionSide::Above,
            bound: policy.soft_max,
            extreme: stats.max,
        });
    }
    if stats.min < policy.soft_min {
        features.push(Feature::Excursion {
            side: ExcursionSide::Below,
            bound: policy.soft_min,
            extreme: stats.min,
        });
    }
    features
}

/// Renders a clinician-readable narrative for a closed segment. The feature
/// list is always computed here, whatever backend phrases the text.
pub fn interpret_segment(
    segment: &VitalSegment,
    stats: &SegmentStats,
    policy: &ChannelPolicy,
    adapter: &Adapter,
) -> Result<Narrative, AdapterError> {
    let features = detect_features(stats, policy);
    let request = GenerationRequest::new(
        Task::Narrative,
        json!({
            "channel": segment.channel.name(),
            "unit": segment.channel.unit(),
            "mean": stats.mean,
            "min": stats.min,
            "max": stats.max,
            "median": stats.median,
            "slope": stats.slope,
            "sample_count": stats.sample_count,
            "duration_seconds": stats.duration_seconds,
            "features": features,
        }),
        0,
    );
    let result = adapter.generate(&request)?;
    Ok(Narrative {
        segment_id: segment.segment_id.clone(),
        text: result.text,
        features,
        generator: result.generator,
        degraded: result.degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::Backend;
    use crate::ids::PatientId;
    use crate::time::Timestamp;
    use crate::vitals::{compute_stats, Channel, ClosedReason, SamplePoint};

    fn segment(channel: Channel, values: &[f64]) -> VitalSegment {
        let samples: Vec<SamplePoint> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SamplePoint { timestamp: Timestamp::from_seconds(i as i64), value: v })
            .collect();
        VitalSegment {
            segment_id: SegmentId::from("seg-1"),
            patient_id: PatientId::from("p"),
            channel,
            start: samples[0].timestamp,
            end: samples.last().unwrap().timestamp,
            samples,
            closed_reason: ClosedReason::Flush,
        }
    }

    fn spo2_ramp() -> VitalSegment {
        let values: Vec<f64> = (0..60).map(|i| 98.0 - 10.0 * i as f64 / 59.0).collect();
        segment(Channel::Spo2, &values)
    }

    #[test]
    fn constant_heart_rate_has_no_features() {
        let seg = segment(Channel::HeartRate, &[72.0; 10]);
        let stats = compute_stats(&seg).unwrap();
        let n = interpret_segment(
            &seg,
            &stats,
            &ChannelPolicy::default_for(Channel::HeartRate),
            &Adapter::mock(),
        )
        .unwrap();
        assert!(n.text.contains("mean 72.0 bpm"), "{}", n.text);
        assert!(n.features.is_empty());
        assert!(!n.degraded);
    }

    #[test]
    fn spo2_ramp_is_flagged_decreasing() {
        let seg = spo2_ramp();
        let stats = compute_stats(&seg).unwrap();
        let n = interpret_segment(&seg, &stats, &ChannelPolicy::default_for(Channel::Spo2), &Adapter::mock())
            .unwrap();
        assert!(n
            .features
            .iter()
            .any(|f| matches!(f, Feature::Trend { direction: TrendDirection::Decreasing, .. })));
        assert!(n.text.contains("trend decreasing"));
        // 88 dips below the 94 soft floor
        assert!(n
            .features
            .iter()
            .any(|f| matches!(f, Feature::Excursion { side: ExcursionSide::Below, .. })));
        assert!(n.text.contains("below soft bound"));
    }

    #[test]
    fn text_mentions_only_listed_features() {
        let seg = segment(Channel::HeartRate, &[72.0, 73.0, 72.0]);
        let stats = compute_stats(&seg).unwrap();
        let n = interpret_segment(
            &seg,
            &stats,
            &ChannelPolicy::default_for(Channel::HeartRate),
            &Adapter::mock(),
        )
        .unwrap();
        assert!(!n.text.contains("trend"));
        assert!(!n.text.contains("soft bound"));
    }

    struct Down;
    impl Backend for Down {
        fn call(&self, _: &GenerationRequest) -> Result<crate::adapter::GenerationResult, AdapterError> {
            Err(AdapterError::Unavailable("timeout".into()))
        }
    }

    #[test]
    fn remote_timeout_gives_degraded_mock_narrative() {
        let seg = spo2_ramp();
        let stats = compute_stats(&seg).unwrap();
        let policy = ChannelPolicy::default_for(Channel::Spo2);
        let degraded =
            interpret_segment(&seg, &stats, &policy, &Adapter::with_backend(Box::new(Down))).unwrap();
        let mock = interpret_segment(&seg, &stats, &policy, &Adapter::mock()).unwrap();
        assert!(degraded.degraded);
        assert_eq!(degraded.text, mock.text);
        assert_eq!(degraded.features, mock.features);
    }
}
