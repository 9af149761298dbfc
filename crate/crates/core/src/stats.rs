//! Small descriptive statistics used by the advantage estimators and run summaries.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance around a precomputed mean (second pass).
pub fn population_variance(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}

/// Population standard deviation, two-pass.
pub fn population_std(values: &[f64]) -> f64 {
    math::sqrt(population_variance(values, mean(values)))
}

/// Linearly interpolated quantile of sorted data (the "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Quartiles and mean of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    pub mean: f64,
    pub count: usize,
}

impl Quartiles {
    /// `None` for an empty sample or one containing `NaN`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&sorted, 0.25);
        let q3 = quantile_sorted(&sorted, 0.75);
        Some(Self {
            q1,
            median: quantile_sorted(&sorted, 0.5),
            q3,
            iqr: q3 - q1,
            mean: mean(values),
            count: values.len(),
        })
    }
}
