//! Trigger detection: rule thresholds, robust-statistics anomaly scoring,
//! risk grading, routine scheduling and track routing.

mod baseline;
mod route;
mod routine;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::ids::{PatientId, PlanId, SegmentId, TriggerId};
use crate::time::Timestamp;
use crate::vitals::{Channel, SegmentStats, VitalsConfig};

pub use baseline::{score_anomaly, Baseline, BaselineConfig};
pub use route::{Candidate, OutlierCandidate, Routed, TriggerRouter};
pub use routine::{poll_routine, Cadence, LocalTime, PlanSpec, RoutinePlan, Topic, WeekDay};
pub use rules::{Comparator, Rule, RuleHit, RuleSet};

/// Ordinal risk grade; `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Low,
    Medium,
    High,
}

impl Grade {
    /// One level up, saturating at `High`.
    pub fn escalated(self) -> Grade {
        match self {
            Grade::Low => Grade::Medium,
            Grade::Medium | Grade::High => Grade::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Grade::Low => "low",
            Grade::Medium => "medium",
            Grade::High => "high",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Outlier,
    Routine,
}

impl Track {
    pub fn name(self) -> &'static str {
        match self {
            Track::Outlier => "outlier",
            Track::Routine => "routine",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anomaly-score bands: `score < medium_from` is low, `score > high_above`
/// is high, anything between (inclusive) is medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bands {
    pub medium_from: f64,
    pub high_above: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self { medium_from: 2.0, high_above: 4.0 }
    }
}

impl Bands {
    pub fn grade(&self, score: f64) -> Grade {
        if score < self.medium_from {
            Grade::Low
        } else if score <= self.high_above {
            Grade::Medium
        } else {
            Grade::High
        }
    }
}

/// Final grade: the maximum of the highest rule base grade and the score band.
pub fn grade_risk(hits: &[RuleHit], score: f64, bands: &Bands) -> Grade {
    hits.iter().map(|h| h.base_grade).fold(bands.grade(score), Ord::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerSource {
    Rule { rules: Vec<String> },
    Statistical { score: f64 },
    Schedule { plan_id: PlanId },
}

/// One segment's contribution to an outlier trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub segment_id: SegmentId,
    pub start: Timestamp,
    pub end: Timestamp,
    pub stats: SegmentStats,
    pub score: f64,
    pub rule_hits: Vec<RuleHit>,
    pub grade: Grade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub trigger_id: TriggerId,
    pub patient_id: PatientId,
    pub track: Track,
    pub grade: Grade,
    pub source: TriggerSource,
    pub channel: Option<Channel>,
    pub topic: Option<Topic>,
    pub plan_id: Option<PlanId>,
    pub evidence: Vec<Evidence>,
    pub created_at: Timestamp,
}

impl TriggerEvent {
    /// Highest anomaly score across the evidence.
    pub fn peak_score(&self) -> f64 {
        self.evidence.iter().map(|e| e.score).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriggerError {
    #[error("no rules configured for channel {0}")]
    UnknownChannel(Channel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggersConfig {
    pub rules: RuleSet,
    pub bands: Bands,
    pub baseline: BaselineConfig,
    pub cooldown_minutes: f64,
    pub routine_grade: Grade,
}

impl Default for TriggersConfig {
    fn default() -> Self {
        Self {
            rules: RuleSet::default(),
            bands: Bands::default(),
            baseline: BaselineConfig::default(),
            cooldown_minutes: 30.0,
            routine_grade: Grade::Low,
        }
    }
}

impl TriggersConfig {
    pub fn validate(&self, vitals: &VitalsConfig) -> Result<(), ConfigError> {
        self.rules.validate(vitals)?;
        if !(self.bands.medium_from.is_finite() && self.bands.high_above.is_finite())
            || self.bands.medium_from > self.bands.high_above
        {
            return Err(ConfigError::new("triggers.bands", "bands must be finite and ordered"));
        }
        self.baseline.validate()?;
        if !(self.cooldown_minutes >= 0.0) {
            return Err(ConfigError::new("triggers.cooldown_minutes", "must be nonnegative"));
        }
        Ok(())
    }
}
