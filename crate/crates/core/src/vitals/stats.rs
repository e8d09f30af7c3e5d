use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::VitalSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Median absolute deviation about the median (unscaled).
    pub mad: f64,
    /// Ordinary least-squares slope in units per second.
    pub slope: f64,
    pub sample_count: usize,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("segment has no samples")]
    EmptySegment,
}

/// Median of `values`; reorders the slice. Even counts average the two middle
/// order statistics.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Median absolute deviation of `values` about `center`.
pub fn mad_about(values: &[f64], center: f64) -> f64 {
    let mut dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    median(&mut dev)
}

pub fn compute_stats(segment: &VitalSegment) -> Result<SegmentStats, StatsError> {
    let samples = &segment.samples;
    let first = samples.first().ok_or(StatsError::EmptySegment)?;
    let n = samples.len();
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();

    let mean = values.iter().sum::<f64>() / n as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scratch = values.clone();
    let med = median(&mut scratch);
    let mad = mad_about(&values, med);

    let xs: Vec<f64> = samples.iter().map(|s| s.timestamp.seconds_since(first.timestamp)).collect();
    let x_mean = xs.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&values) {
        let dx = x - x_mean;
        sxy += dx * (y - mean);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    Ok(SegmentStats {
        mean,
        min,
        max,
        median: med,
        mad,
        slope,
        sample_count: n,
        duration_seconds: samples.last().unwrap().timestamp.seconds_since(first.timestamp),
    })
}
