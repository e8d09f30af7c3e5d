//! Vital-sign collection: ingest validation, segmentation, descriptive
//! statistics and narrative rendering.

mod ingest;
mod narrative;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::ids::{DeviceId, PatientId, SegmentId};
use crate::time::Timestamp;

pub use ingest::{IngestError, IngestState, SegmentationPolicy};
pub use narrative::{detect_features, interpret_segment, ExcursionSide, Feature, Narrative, TrendDirection};
pub use stats::{compute_stats, mad_about, median, SegmentStats, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    HeartRate,
    Spo2,
    SystolicBp,
    DiastolicBp,
    Glucose,
    Steps,
    Temperature,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::HeartRate,
        Channel::Spo2,
        Channel::SystolicBp,
        Channel::DiastolicBp,
        Channel::Glucose,
        Channel::Steps,
        Channel::Temperature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::HeartRate => "heart_rate",
            Channel::Spo2 => "spo2",
            Channel::SystolicBp => "systolic_bp",
            Channel::DiastolicBp => "diastolic_bp",
            Channel::Glucose => "glucose",
            Channel::Steps => "steps",
            Channel::Temperature => "temperature",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Channel::HeartRate => "bpm",
            Channel::Spo2 => "%",
            Channel::SystolicBp | Channel::DiastolicBp => "mmHg",
            Channel::Glucose => "mg/dL",
            Channel::Steps => "steps/min",
            Channel::Temperature => "°C",
        }
    }

    /// Lay description used in patient-facing text.
    pub fn plain_name(self) -> &'static str {
        match self {
            Channel::HeartRate => "heart rate",
            Channel::Spo2 => "blood oxygen",
            Channel::SystolicBp => "systolic blood pressure",
            Channel::DiastolicBp => "diastolic blood pressure",
            Channel::Glucose => "blood glucose",
            Channel::Steps => "activity level",
            Channel::Temperature => "body temperature",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub patient_id: PatientId,
    pub channel: Channel,
    pub timestamp: Timestamp,
    pub value: f64,
    pub device_id: DeviceId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedReason {
    Gap,
    MaxLength,
    Flush,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub timestamp: Timestamp,
    pub value: f64,
}

/// A closed, immutable window of samples from one (patient, channel) stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSegment {
    pub segment_id: SegmentId,
    pub patient_id: PatientId,
    pub channel: Channel,
    pub samples: Vec<SamplePoint>,
    pub start: Timestamp,
    pub end: Timestamp,
    pub closed_reason: ClosedReason,
}

impl VitalSegment {
    pub fn duration_seconds(&self) -> f64 {
        self.end.seconds_since(self.start)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.value)
    }
}

/// Per-channel plausibility bounds and narrative thresholds.
///
/// Hard bounds reject readings at ingest; soft bounds only flag excursions in
/// narratives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPolicy {
    pub hard_min: f64,
    pub hard_max: f64,
    pub soft_min: f64,
    pub soft_max: f64,
    /// Absolute slope (units per second) above which a trend is reported.
    pub trend_threshold: f64,
}

impl ChannelPolicy {
    const fn new(hard: (f64, f64), soft: (f64, f64), trend_threshold: f64) -> Self {
        Self { hard_min: hard.0, hard_max: hard.1, soft_min: soft.0, soft_max: soft.1, trend_threshold }
    }

    pub fn default_for(channel: Channel) -> Self {
        match channel {
            Channel::HeartRate => Self::new((20.0, 300.0), (50.0, 100.0), 0.5),
            Channel::Spo2 => Self::new((0.0, 100.0), (94.0, 100.0), 0.05),
            Channel::SystolicBp => Self::new((40.0, 300.0), (90.0, 140.0), 0.5),
            Channel::DiastolicBp => Self::new((20.0, 200.0), (60.0, 90.0), 0.5),
            Channel::Glucose => Self::new((10.0, 1000.0), (70.0, 180.0), 0.5),
            Channel::Steps => Self::new((0.0, 400.0), (0.0, 200.0), 2.0),
            Channel::Temperature => Self::new((25.0, 45.0), (35.5, 37.8), 0.01),
        }
    }

    pub fn within_hard_bounds(&self, value: f64) -> bool {
        value >= self.hard_min && value <= self.hard_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitalsConfig {
    pub segmentation: SegmentationPolicy,
    pub channels: BTreeMap<Channel, ChannelPolicy>,
}

impl Default for VitalsConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationPolicy::default(),
            channels: Channel::ALL.iter().map(|&c| (c, ChannelPolicy::default_for(c))).collect(),
        }
    }
}

impl VitalsConfig {
    pub fn policy(&self, channel: Channel) -> ChannelPolicy {
        self.channels.get(&channel).copied().unwrap_or_else(|| ChannelPolicy::default_for(channel))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.segmentation.gap_threshold_seconds <= 0.0 {
            return Err(ConfigError::new("vitals.segmentation.gap_threshold_seconds", "must be positive"));
        }
        if self.segmentation.max_segment_seconds <= 0.0 {
            return Err(ConfigError::new("vitals.segmentation.max_segment_seconds", "must be positive"));
        }
        for (channel, p) in &self.channels {
            let path = format!("vitals.channels.{channel}");
            let finite = [p.hard_min, p.hard_max, p.soft_min, p.soft_max, p.trend_threshold]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(ConfigError::new(path, "bounds must be finite"));
            }
            if p.hard_min > p.hard_max {
                return Err(ConfigError::new(format!("{path}.hard_min"), "exceeds hard_max"));
            }
            if p.soft_min > p.soft_max {
                return Err(ConfigError::new(format!("{path}.soft_min"), "exceeds soft_max"));
            }
            if p.trend_threshold < 0.0 {
                return Err(ConfigError::new(format!("{path}.trend_threshold"), "must be nonnegative"));
            }
        }
        Ok(())
    }
}
