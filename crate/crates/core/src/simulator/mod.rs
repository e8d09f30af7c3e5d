//! Reproducible synthetic wearable streams and a scripted patient.
//!
//! Each sample is `mean + amplitude * sin(2*pi*s/86400) + noise`, where `s`
//! is seconds since local midnight and `noise` is uniform on
//! `[-spread, spread]`. Inside an episode the value is pulled toward the
//! target level with a linear ramp at both ends. Values are clamped to the
//! channel's hard bounds and rounded to 0.1.
//!
//! Noise comes from a 64-bit linear congruential generator:
//! `state = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`,
//! seeded with `state = seed`; each draw advances once and uses the top 53
//! bits as `u = (state >> 11) / 2^53`, mapped to `(2u - 1) * spread`. One
//! draw is taken per sample, in timestamp order and then channel order,
//! whether or not the spread is zero.

mod scenario;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{DeviceId, PatientId};
use crate::time::{Timestamp, MILLIS_PER_DAY};
use crate::triggers::{PlanSpec, Track};
use crate::vitals::{Channel, ChannelPolicy, VitalSample};

pub use scenario::{random_spec, run_scenario, ClinicianPolicy, Pipeline, Refusal, RunSummary, ScenarioSpec};

pub const LCG_MULTIPLIER: u64 = 6_364_136_223_846_793_005;
pub const LCG_INCREMENT: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT);
        self.state
    }

    /// Uniform on `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform on `[-spread, spread)`.
    pub fn noise(&mut self, spread: f64) -> f64 {
        (2.0 * self.next_unit() - 1.0) * spread
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub circadian_amplitude: f64,
}

/// Maps a slot-name pattern to a scripted answer. Patterns are an exact
/// slot name, `*`, or a prefix ending in `*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRule {
    pub slot: String,
    #[serde(default)]
    pub track: Option<Track>,
    pub text: String,
}

impl AnswerRule {
    fn matches(&self, track: Track, slot: &str) -> bool {
        if self.track.is_some_and(|t| t != track) {
            return false;
        }
        match self.slot.strip_suffix('*') {
            Some(prefix) => slot.starts_with(prefix),
            None => self.slot == slot,
        }
    }
}

fn default_device() -> DeviceId {
    DeviceId::from("dev-1")
}

fn default_start() -> Timestamp {
    // a Monday
    Timestamp::parse_rfc3339("2024-01-01T00:00:00Z").expect("valid constant")
}

fn default_interval() -> f64 {
    1.0
}

fn default_filler() -> String {
    "hmm, not sure".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientProfile {
    pub patient_id: PatientId,
    #[serde(default = "default_device")]
    pub device_id: DeviceId,
    #[serde(default)]
    pub utc_offset_minutes: i32,
    #[serde(default = "default_start")]
    pub start: Timestamp,
    #[serde(default = "default_interval")]
    pub sample_interval_seconds: f64,
    #[serde(default)]
    pub channels: BTreeMap<Channel, ChannelProfile>,
    #[serde(default)]
    pub plans: Vec<PlanSpec>,
    #[serde(default)]
    pub answers: Vec<AnswerRule>,
    /// Answer used when no rule matches; deliberately unparseable.
    #[serde(default = "default_filler")]
    pub unparseable_filler: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub channel: Channel,
    pub start_seconds: f64,
    pub duration_seconds: f64,
    /// Absolute target level; exclusive with `delta`.
    #[serde(default)]
    pub level: Option<f64>,
    /// Target relative to the channel mean.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub ramp_seconds: f64,
}

impl Episode {
    fn target(&self, mean: f64) -> f64 {
        self.level.unwrap_or(mean + self.delta.unwrap_or(0.0))
    }

    fn end_seconds(&self) -> f64 {
        self.start_seconds + self.duration_seconds
    }

    /// Weight of the target at `offset` seconds into the run; 0 outside.
    fn weight(&self, offset: f64) -> f64 {
        if offset < self.start_seconds || offset >= self.end_seconds() {
            return 0.0;
        }
        if self.ramp_seconds <= 0.0 {
            return 1.0;
        }
        let rise = (offset - self.start_seconds) / self.ramp_seconds;
        let fall = (self.end_seconds() - offset) / self.ramp_seconds;
        rise.min(fall).min(1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyScript {
    #[serde(default)]
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("episodes overlap on channel {0}")]
    OverlappingEpisodes(Channel),
    #[error("invalid episode {index}: {message}")]
    InvalidEpisode { index: usize, message: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("duration must be positive")]
    NonPositiveDuration,
    #[error("pipeline failed: {0}")]
    Pipeline(String),
}

impl PatientProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sample_interval_seconds > 0.0) {
            return Err(SimError::InvalidProfile("sample_interval_seconds must be positive".into()));
        }
        if self.utc_offset_minutes.abs() >= 24 * 60 {
            return Err(SimError::InvalidProfile("utc_offset_minutes out of range".into()));
        }
        for (channel, p) in &self.channels {
            if !(p.spread >= 0.0) {
                return Err(SimError::InvalidProfile(format!("{channel}: spread must be nonnegative")));
            }
            if !ChannelPolicy::default_for(*channel).within_hard_bounds(p.mean) {
                return Err(SimError::InvalidProfile(format!("{channel}: mean outside plausibility bounds")));
            }
        }
        Ok(())
    }
}

impl AnomalyScript {
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, e) in self.episodes.iter().enumerate() {
            if !(e.duration_seconds > 0.0) || !(e.start_seconds >= 0.0) || !(e.ramp_seconds >= 0.0) {
                return Err(SimError::InvalidEpisode {
                    index: i,
                    message: "times must be nonnegative, duration positive".into(),
                });
            }
            if e.level.is_some() == e.delta.is_some() {
                return Err(SimError::InvalidEpisode {
                    index: i,
                    message: "give exactly one of level or delta".into(),
                });
            }
        }
        let mut by_channel: BTreeMap<Channel, Vec<&Episode>> = BTreeMap::new();
        for e in &self.episodes {
            by_channel.entry(e.channel).or_default().push(e);
        }
        for (channel, mut eps) in by_channel {
            eps.sort_by(|a, b| a.start_seconds.total_cmp(&b.start_seconds));
            if eps.windows(2).any(|w| w[1].start_seconds < w[0].end_seconds()) {
                return Err(SimError::OverlappingEpisodes(channel));
            }
        }
        Ok(())
    }
}

fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Circadian term at `t` for a patient `offset_minutes` east of UTC.
pub fn circadian(amplitude: f64, t: Timestamp, offset_minutes: i32) -> f64 {
    let local_ms = (t.as_millis() + offset_minutes as i64 * 60_000).rem_euclid(MILLIS_PER_DAY);
    amplitude * (std::f64::consts::TAU * local_ms as f64 / MILLIS_PER_DAY as f64).sin()
}

/// Generates `duration_seconds` of samples from the profile start.
pub fn synth_stream(
    profile: &PatientProfile,
    script: &AnomalyScript,
    duration_seconds: f64,
    seed: u64,
) -> Result<Vec<VitalSample>, SimError> {
    if !(duration_seconds > 0.0) {
        return Err(SimError::NonPositiveDuration);
    }
    profile.validate()?;
    script.validate()?;
    let mut rng = Lcg::new(seed);
    let interval_ms = (profile.sample_interval_seconds * 1000.0).round() as i64;
    let duration_ms = (duration_seconds * 1000.0).round() as i64;
    let mut out = Vec::new();
    let mut offset_ms = 0;
    while offset_ms < duration_ms {
        let t = profile.start.plus_millis(offset_ms);
        let offset = offset_ms as f64 / 1000.0;
        for (&channel, p) in &profile.channels {
            let noise = rng.noise(p.spread);
            let normal = p.mean + circadian(p.circadian_amplitude, t, profile.utc_offset_minutes) + noise;
            let mut value = normal;
            for e in script.episodes.iter().filter(|e| e.channel == channel) {
                let w = e.weight(offset);
                if w > 0.0 {
                    value = (1.0 - w) * normal + w * (e.target(p.mean) + noise);
                }
            }
            let bounds = ChannelPolicy::default_for(channel);
            out.push(VitalSample {
                patient_id: profile.patient_id.clone(),
                channel,
                timestamp: t,
                value: round_tenth(value.clamp(bounds.hard_min, bounds.hard_max)),
                device_id: profile.device_id.clone(),
            });
        }
        offset_ms += interval_ms;
    }
    Ok(out)
}

/// The first matching rule's text, else the unparseable filler.
pub fn scripted_answer(profile: &PatientProfile, track: Track, slot: &str) -> String {
    profile
        .answers
        .iter()
        .find(|r| r.matches(track, slot))
        .map(|r| r.text.clone())
        .unwrap_or_else(|| profile.unparseable_filler.clone())
}
