use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::ids::PatientId;
use crate::time::Span;
use crate::vitals::{mad_about, median, Channel, SamplePoint, SegmentStats, VitalSegment};

/// Consistency constant that scales a MAD to a normal standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub window_days: f64,
    pub ewma_alpha: f64,
    /// Below this many samples the score is 0.
    pub warmup_samples: usize,
    /// A MAD of exactly zero is replaced by
    /// `max(mad_floor_fraction * |rolling_median|, mad_floor_min)`.
    pub mad_floor_fraction: f64,
    pub mad_floor_min: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            window_days: 7.0,
            ewma_alpha: 0.3,
            warmup_samples: 50,
            mad_floor_fraction: 0.01,
            mad_floor_min: 0.5,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.window_days > 0.0) {
            return Err(ConfigError::new("triggers.baseline.window_days", "must be positive"));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(ConfigError::new("triggers.baseline.ewma_alpha", "must lie in (0, 1]"));
        }
        if !(self.mad_floor_fraction >= 0.0 && self.mad_floor_min > 0.0) {
            return Err(ConfigError::new("triggers.baseline.mad_floor_min", "floor must be positive"));
        }
        Ok(())
    }

    fn window(&self) -> Span {
        Span::from_secs_f64(self.window_days * 86_400.0)
    }
}

/// Personal reference level for one (patient, channel) stream.
///
/// Built only from segments that did not qualify as outliers, so an episode
/// never drags the reference toward itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub patient_id: PatientId,
    pub channel: Channel,
    pub rolling_median: f64,
    pub rolling_mad: f64,
    /// Exponentially weighted mean of segment medians.
    pub ewma: f64,
    pub sample_count: usize,
    #[serde(skip)]
    window: VecDeque<SamplePoint>,
}

impl Baseline {
    pub fn new(patient_id: PatientId, channel: Channel) -> Self {
        Self {
            patient_id,
            channel,
            rolling_median: 0.0,
            rolling_mad: 0.0,
            ewma: 0.0,
            sample_count: 0,
            window: VecDeque::new(),
        }
    }

    /// A baseline with the given summary and no retained samples.
    pub fn from_summary(
        patient_id: PatientId,
        channel: Channel,
        rolling_median: f64,
        rolling_mad: f64,
        ewma: f64,
        sample_count: usize,
    ) -> Self {
        Self { patient_id, channel, rolling_median, rolling_mad, ewma, sample_count, window: VecDeque::new() }
    }

    /// Folds a non-outlier segment into the baseline and drops samples older
    /// than the window, measured back from the segment's end.
    pub fn update(&mut self, segment: &VitalSegment, stats: &SegmentStats, config: &BaselineConfig) {
        let first_update = self.window.is_empty() && self.sample_count == 0;
        self.window.extend(segment.samples.iter().copied());
        let horizon = segment.end - config.window();
        while self.window.front().is_some_and(|s| s.timestamp <= horizon) {
            self.window.pop_front();
        }
        let values: Vec<f64> = self.window.iter().map(|s| s.value).collect();
        self.sample_count = values.len();
        if values.is_empty() {
            return;
        }
        let mut scratch = values.clone();
        self.rolling_median = median(&mut scratch);
        self.rolling_mad = mad_about(&values, self.rolling_median);
        self.ewma = if first_update {
            stats.median
        } else {
            config.ewma_alpha * stats.median + (1.0 - config.ewma_alpha) * self.ewma
        };
    }

    pub fn retained_samples(&self) -> usize {
        self.window.len()
    }
}

/// `max(robust z, ewma deviation ratio)` of the segment median against the
/// baseline; 0 during warm-up.
pub fn score_anomaly(stats: &SegmentStats, baseline: &Baseline, config: &BaselineConfig) -> f64 {
    if baseline.sample_count < config.warmup_samples {
        return 0.0;
    }
    let mad = if baseline.rolling_mad == 0.0 {
        (config.mad_floor_fraction * baseline.rolling_median.abs()).max(config.mad_floor_min)
    } else {
        baseline.rolling_mad
    };
    let scale = MAD_SCALE * mad;
    let robust_z = (stats.median - baseline.rolling_median).abs() / scale;
    let ewma_ratio = (stats.median - baseline.ewma).abs() / scale;
    robust_z.max(ewma_ratio)
}
