use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Channel, ClosedReason, SamplePoint, VitalSample, VitalSegment, VitalsConfig};
use crate::ids::{PatientId, SegmentId};
use crate::time::{Span, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationPolicy {
    /// A silence at least this long closes the open segment.
    pub gap_threshold_seconds: f64,
    /// Segments never span more than this.
    pub max_segment_seconds: f64,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        Self { gap_threshold_seconds: 60.0, max_segment_seconds: 300.0 }
    }
}

impl SegmentationPolicy {
    fn gap(&self) -> Span {
        Span::from_secs_f64(self.gap_threshold_seconds)
    }

    fn max_len(&self) -> Span {
        Span::from_secs_f64(self.max_segment_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum IngestError {
    #[error("timestamp {got} is not after last accepted {last}")]
    OutOfOrderTimestamp { last: Timestamp, got: Timestamp },
    #[error("{channel} value {value} outside plausible range [{min}, {max}]")]
    ImplausibleValue { channel: Channel, value: f64, min: f64, max: f64 },
    #[error("{channel} value is not finite")]
    NonFiniteValue { channel: Channel },
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::OutOfOrderTimestamp { .. } => "OutOfOrderTimestamp",
            IngestError::ImplausibleValue { .. } => "ImplausibleValue",
            IngestError::NonFiniteValue { .. } => "NonFiniteValue",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct StreamState {
    last_accepted: Option<Timestamp>,
    open: Vec<SamplePoint>,
}

type StreamKey = (PatientId, Channel);

/// Ingest state for every (patient, channel) stream.
///
/// Timestamps must be strictly increasing per (patient, channel); this is
/// stricter than per-device ordering and keeps segments time-ordered when a
/// patient has several devices on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestState {
    policy: SegmentationPolicy,
    streams: BTreeMap<StreamKey, StreamState>,
    closed: Vec<VitalSegment>,
}

impl IngestState {
    pub fn new(policy: SegmentationPolicy) -> Self {
        Self { policy, streams: BTreeMap::new(), closed: Vec::new() }
    }

    pub fn policy(&self) -> &SegmentationPolicy {
        &self.policy
    }

    /// Validates a sample against the current state without mutating it.
    pub fn check(&self, sample: &VitalSample, config: &VitalsConfig) -> Result<(), IngestError> {
        if !sample.value.is_finite() {
            return Err(IngestError::NonFiniteValue { channel: sample.channel });
        }
        let bounds = config.policy(sample.channel);
        if !bounds.within_hard_bounds(sample.value) {
            return Err(IngestError::ImplausibleValue {
                channel: sample.channel,
                value: sample.value,
                min: bounds.hard_min,
                max: bounds.hard_max,
            });
        }
        let key = (sample.patient_id.clone(), sample.channel);
        if let Some(last) = self.streams.get(&key).and_then(|s| s.last_accepted) {
            if sample.timestamp <= last {
                return Err(IngestError::OutOfOrderTimestamp { last, got: sample.timestamp });
            }
        }
        Ok(())
    }

    /// Accepts a sample into its stream's open segment, closing the segment
    /// first when the sample lands after a gap or past the maximum length.
    pub fn ingest(&mut self, sample: &VitalSample, config: &VitalsConfig) -> Result<(), IngestError> {
        self.check(sample, config)?;
        let key = (sample.patient_id.clone(), sample.channel);
        let gap = self.policy.gap();
        let max_len = self.policy.max_len();
        let stream = self.streams.entry(key.clone()).or_default();
        if let (Some(first), Some(last)) = (stream.open.first(), stream.open.last()) {
            let reason = if sample.timestamp - last.timestamp >= gap {
                Some(ClosedReason::Gap)
            } else if sample.timestamp - first.timestamp >= max_len {
                Some(ClosedReason::MaxLength)
            } else {
                None
            };
            if let Some(reason) = reason {
                let samples = std::mem::take(&mut stream.open);
                self.closed.push(build_segment(&key, samples, reason));
            }
        }
        let stream = self.streams.get_mut(&key).expect("entry created above");
        stream.open.push(SamplePoint { timestamp: sample.timestamp, value: sample.value });
        stream.last_accepted = Some(sample.timestamp);
        Ok(())
    }

    /// Returns every segment that has closed by `now`: those closed by
    /// earlier ingests plus open segments whose silence or length has run out.
    pub fn segment_stream(&mut self, now: Timestamp) -> Vec<VitalSegment> {
        let gap = self.policy.gap();
        let max_len = self.policy.max_len();
        let mut out = std::mem::take(&mut self.closed);
        for (key, stream) in self.streams.iter_mut() {
            let (Some(first), Some(last)) = (stream.open.first(), stream.open.last()) else {
                continue;
            };
            let reason = if now - last.timestamp >= gap {
                ClosedReason::Gap
            } else if now - first.timestamp >= max_len {
                ClosedReason::MaxLength
            } else {
                continue;
            };
            let samples = std::mem::take(&mut stream.open);
            out.push(build_segment(key, samples, reason));
        }
        sort_segments(&mut out);
        out
    }

    /// Closes every open segment (optionally for one patient) with reason flush.
    pub fn flush(&mut self, patient: Option<&PatientId>) -> Vec<VitalSegment> {
        let mut out = Vec::new();
        let mut keep = Vec::new();
        for seg in std::mem::take(&mut self.closed) {
            if patient.is_none_or(|p| &seg.patient_id == p) {
                out.push(seg);
            } else {
                keep.push(seg);
            }
        }
        self.closed = keep;
        for (key, stream) in self.streams.iter_mut() {
            if patient.is_some_and(|p| &key.0 != p) || stream.open.is_empty() {
                continue;
            }
            let samples = std::mem::take(&mut stream.open);
            out.push(build_segment(key, samples, ClosedReason::Flush));
        }
        sort_segments(&mut out);
        out
    }

    /// Samples currently buffered in the open segment of one stream.
    pub fn open_samples(&self, patient: &PatientId, channel: Channel) -> &[SamplePoint] {
        self.streams.get(&(patient.clone(), channel)).map(|s| s.open.as_slice()).unwrap_or(&[])
    }

    pub fn open_sample_count(&self) -> usize {
        self.streams.values().map(|s| s.open.len()).sum::<usize>()
            + self.closed.iter().map(|s| s.samples.len()).sum::<usize>()
    }
}

fn build_segment(key: &StreamKey, samples: Vec<SamplePoint>, reason: ClosedReason) -> VitalSegment {
    let start = samples.first().expect("closed segments are non-empty").timestamp;
    let end = samples.last().expect("closed segments are non-empty").timestamp;
    VitalSegment {
        segment_id: SegmentId::new(format!("seg-{}-{}-{}", key.0, key.1, start.as_millis())),
        patient_id: key.0.clone(),
        channel: key.1,
        samples,
        start,
        end,
        closed_reason: reason,
    }
}

fn sort_segments(segments: &mut [VitalSegment]) {
    segments.sort_by(|a, b| (&a.patient_id, a.channel, a.start).cmp(&(&b.patient_id, b.channel, b.start)));
}
