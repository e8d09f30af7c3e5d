use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Grade, TriggerError};
use crate::config::ConfigError;
use crate::time::Timestamp;
use crate::vitals::{Channel, SegmentStats, VitalSegment, VitalsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "<")]
    Below,
}

impl Comparator {
    fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Above => value > bound,
            Comparator::Below => value < bound,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Above => ">",
            Comparator::Below => "<",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub comparator: Comparator,
    pub bound: f64,
    #[serde(default)]
    pub min_duration_seconds: f64,
    pub base_grade: Grade,
}

impl Rule {
    pub fn reference(&self, channel: Channel) -> String {
        format!("{}{}{}", channel, self.comparator.symbol(), self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleHit {
    pub rule: String,
    pub channel: Channel,
    pub comparator: Comparator,
    pub bound: f64,
    pub base_grade: Grade,
    pub run_start: Timestamp,
    pub run_end: Timestamp,
    pub duration_seconds: f64,
    /// Most extreme value inside the qualifying run.
    pub extreme: f64,
}

/// Threshold rules keyed by channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    pub channels: BTreeMap<Channel, Vec<Rule>>,
}

impl Default for RuleSet {
    /// Common chronic-care alert conventions.
    fn default() -> Self {
        let rule = |comparator, bound, min_duration_seconds| Rule {
            comparator,
            bound,
            min_duration_seconds,
            base_grade: Grade::High,
        };
        use Comparator::{Above, Below};
        let channels = BTreeMap::from([
            (Channel::HeartRate, vec![rule(Above, 120.0, 60.0), rule(Below, 40.0, 60.0)]),
            (Channel::Spo2, vec![rule(Below, 90.0, 30.0)]),
            (Channel::SystolicBp, vec![rule(Above, 180.0, 0.0), rule(Below, 90.0, 0.0)]),
            (Channel::Glucose, vec![rule(Above, 250.0, 0.0), rule(Below, 70.0, 0.0)]),
        ]);
        Self { channels }
    }
}

impl RuleSet {
    pub fn empty() -> Self {
        Self { channels: BTreeMap::new() }
    }

    pub fn validate(&self, vitals: &VitalsConfig) -> Result<(), ConfigError> {
        for (channel, rules) in &self.channels {
            let hard = vitals.policy(*channel);
            for (i, r) in rules.iter().enumerate() {
                let path = format!("triggers.rules.{channel}[{i}]");
                if !r.bound.is_finite() || r.bound < hard.hard_min || r.bound > hard.hard_max {
                    return Err(ConfigError::new(
                        format!("{path}.bound"),
                        "must lie within the channel's hard plausibility range",
                    ));
                }
                if !(r.min_duration_seconds >= 0.0) {
                    return Err(ConfigError::new(
                        format!("{path}.min_duration_seconds"),
                        "must be nonnegative",
                    ));
                }
            }
            // "> a" and "< b" overlap exactly when b > a
            let lowest_above = rules
                .iter()
                .filter(|r| r.comparator == Comparator::Above)
                .map(|r| r.bound)
                .fold(f64::INFINITY, f64::min);
            let highest_below = rules
                .iter()
                .filter(|r| r.comparator == Comparator::Below)
                .map(|r| r.bound)
                .fold(f64::NEG_INFINITY, f64::max);
            if highest_below > lowest_above {
                return Err(ConfigError::new(
                    format!("triggers.rules.{channel}"),
                    "contradictory rules: '>' and '<' regions overlap",
                ));
            }
        }
        Ok(())
    }

    /// Rules that hold over a contiguous run of samples lasting at least
    /// their minimum duration. Run duration is measured first to last sample.
    /// At most one hit per rule: the longest qualifying run.
    pub fn evaluate(
        &self,
        stats: &SegmentStats,
        segment: &VitalSegment,
    ) -> Result<Vec<RuleHit>, TriggerError> {
        let rules =
            self.channels.get(&segment.channel).ok_or(TriggerError::UnknownChannel(segment.channel))?;
        let mut hits = Vec::new();
        for rule in rules {
            // cheap reject from the stats
            let reachable = match rule.comparator {
                Comparator::Above => stats.max > rule.bound,
                Comparator::Below => stats.min < rule.bound,
            };
            if !reachable {
                continue;
            }
            let mut best: Option<RuleHit> = None;
            let mut run: Option<(Timestamp, f64)> = None;
            for sample in &segment.samples {
                if !rule.comparator.holds(sample.value, rule.bound) {
                    run = None;
                    continue;
                }
                let (start, extreme) = match run {
                    None => (sample.timestamp, sample.value),
                    Some((start, ext)) => (
                        start,
                        match rule.comparator {
                            Comparator::Above => ext.max(sample.value),
                            Comparator::Below => ext.min(sample.value),
                        },
                    ),
                };
                run = Some((start, extreme));
                let duration = sample.timestamp.seconds_since(start);
                let longer = best.as_ref().is_none_or(|b| duration > b.duration_seconds);
                if duration >= rule.min_duration_seconds && longer {
                    best = Some(RuleHit {
                        rule: rule.reference(segment.channel),
                        channel: segment.channel,
                        comparator: rule.comparator,
                        bound: rule.bound,
                        base_grade: rule.base_grade,
                        run_start: start,
                        run_end: sample.timestamp,
                        duration_seconds: duration,
                        extreme,
                    });
                }
            }
            hits.extend(best);
        }
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{PatientId, SegmentId};
    use crate::vitals::{compute_stats, ClosedReason, SamplePoint};

    fn hr_segment(values: impl IntoIterator<Item = f64>) -> VitalSegment {
        let samples: Vec<SamplePoint> = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| SamplePoint { timestamp: Timestamp::from_seconds(i as i64), value: v })
            .collect();
        VitalSegment {
            segment_id: SegmentId::from("s"),
            patient_id: PatientId::from("p"),
            channel: Channel::HeartRate,
            start: samples[0].timestamp,
            end: samples.last().unwrap().timestamp,
            samples,
            closed_reason: ClosedReason::Flush,
        }
    }

    fn tachy_only() -> RuleSet {
        RuleSet {
            channels: BTreeMap::from([(
                Channel::HeartRate,
                vec![Rule {
                    comparator: Comparator::Above,
                    bound: 120.0,
                    min_duration_seconds: 60.0,
                    base_grade: Grade::High,
                }],
            )]),
        }
    }

    #[test]
    fn sustained_tachycardia_hits() {
        let seg = hr_segment(std::iter::repeat_n(150.0, 121));
        let hits = tachy_only().evaluate(&compute_stats(&seg).unwrap(), &seg).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].base_grade, Grade::High);
        assert_eq!(hits[0].duration_seconds, 120.0);
    }

    #[test]
    fn brief_spike_does_not_hit() {
        let values = (0..300).map(|i| if (100..105).contains(&i) { 150.0 } else { 72.0 });
        let seg = hr_segment(values);
        let hits = tachy_only().evaluate(&compute_stats(&seg).unwrap(), &seg).unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn in_bounds_is_empty() {
        let seg = hr_segment(std::iter::repeat_n(72.0, 60));
        let hits = RuleSet::default().evaluate(&compute_stats(&seg).unwrap(), &seg).unwrap();
        assert!(hits.is_empty());
    }

    #[test]
    fn unconfigured_channel_is_reported() {
        let mut seg = hr_segment([36.5, 36.6]);
        seg.channel = Channel::Temperature;
        let err = RuleSet::default().evaluate(&compute_stats(&seg).unwrap(), &seg).unwrap_err();
        assert_eq!(err, TriggerError::UnknownChannel(Channel::Temperature));
    }

    #[test]
    fn instant_rule_fires_on_single_sample() {
        let rules = RuleSet::default();
        let mut seg = hr_segment([120.0, 190.0, 120.0]);
        seg.channel = Channel::SystolicBp;
        let hits = rules.evaluate(&compute_stats(&seg).unwrap(), &seg).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].extreme, 190.0);
    }

    #[test]
    fn default_rules_validate() {
        RuleSet::default().validate(&VitalsConfig::default()).unwrap();
    }

    #[test]
    fn overlapping_rules_are_rejected() {
        let mut rules = RuleSet::default();
        rules.channels.get_mut(&Channel::HeartRate).unwrap().push(Rule {
            comparator: Comparator::Below,
            bound: 130.0,
            min_duration_seconds: 0.0,
            base_grade: Grade::Low,
        });
        let err = rules.validate(&VitalsConfig::default()).unwrap_err();
        assert_eq!(err.path, "triggers.rules.heart_rate");
    }

    #[test]
    fn out_of_range_bound_is_rejected() {
        let mut rules = RuleSet::empty();
        rules.channels.insert(
            Channel::Spo2,
            vec![Rule {
                comparator: Comparator::Above,
                bound: 120.0,
                min_duration_seconds: 0.0,
                base_grade: Grade::High,
            }],
        );
        assert!(rules.validate(&VitalsConfig::default()).is_err());
    }
}
