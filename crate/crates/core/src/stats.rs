//! Point estimates with percentile-bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

/// Mean with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (0 for fewer than two values).
pub fn stderr(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Percentile bootstrap of the mean. The interval is widened, if needed,
/// to contain the point estimate.
pub fn bootstrap_mean(values: &[f64], resamples: usize, rng: &mut StreamRng) -> Estimate {
    bootstrap_mean_shifted(values, &vec![0.0; resamples], rng)
}

/// Two-level bootstrap: replicate `b` is a resampled mean of `values` plus
/// `shifts[b]`, an independent replicate of some upstream error in the
/// quantity being averaged. `stderr` adds the two variances.
pub fn bootstrap_mean_shifted(values: &[f64], shifts: &[f64], rng: &mut StreamRng) -> Estimate {
    let n = values.len();
    let resamples = shifts.len();
    let m = if n == 0 { f64::NAN } else { mean(values) };
    let shift_var = if resamples < 2 {
        0.0
    } else {
        stderr(shifts).powi(2) * resamples as f64
    };
    let se = (stderr(values).powi(2) + shift_var).sqrt();
    if n == 0 || resamples == 0 {
        return Estimate {
            mean: m,
            ci_low: m,
            ci_high: m,
            stderr: se,
        };
    }
    let mut means: Vec<f64> = shifts
        .iter()
        .map(|shift| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64 + shift)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |f: f64| means[((resamples - 1) as f64 * f).round() as usize];
    Estimate {
        mean: m,
        ci_low: at(0.025).min(m),
        ci_high: at(0.975).max(m),
        stderr: se,
    }
}
