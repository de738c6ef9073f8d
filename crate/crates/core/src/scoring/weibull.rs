use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weibull distribution, optionally conditioned on exceeding `shift`.
///
/// With `shift = 0` this is the ordinary two-parameter Weibull. Otherwise the
/// CDF is that of `X | X > shift`, which is what a fit on the upper tail of a
/// sample estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    pub shape: f64,
    pub scale: f64,
    pub shift: f64,
}

impl WeibullModel {
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= self.shift {
            return 0.0;
        }
        if x.is_infinite() {
            return 1.0;
        }
        let z = (x / self.scale).powf(self.shape) - (self.shift / self.scale).powf(self.shape);
        -(-z).exp_m1()
    }
}

const LOG_SHAPE_MIN: f64 = -4.0;
const LOG_SHAPE_MAX: f64 = 6.0;

/// Maximum-likelihood fit of a two-parameter Weibull to the whole sample.
pub fn fit_weibull(data: &[f64]) -> Result<WeibullModel> {
    fit_truncated(data, 0.0)
}

/// Fits the `tail_size` largest values of `data`, conditioned on exceeding
/// the largest value left out of the tail (zero when the tail is the whole
/// sample). The returned model's `shift` is that threshold.
pub fn fit_weibull_tail(data: &[f64], tail_size: usize) -> Result<WeibullModel> {
    if tail_size < 2 {
        return Err(Error::Fit(format!("tail size must be at least 2, got {tail_size}")));
    }
    if data.len() < tail_size {
        return Err(Error::Fit(format!(
            "{} values available for a tail of {tail_size}",
            data.len()
        )));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted.len() - tail_size;
    let threshold = if cut == 0 { 0.0 } else { sorted[cut - 1] };
    fit_truncated(&sorted[cut..], threshold)
}

fn fit_truncated(values: &[f64], threshold: f64) -> Result<WeibullModel> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Fit(format!("Weibull data must be finite and non-negative, found {v}")));
    }
    let above: Vec<f64> = values.iter().copied().filter(|&v| v > threshold).collect();
    let max = above.iter().copied().fold(0.0, f64::max);
    let min = above.iter().copied().fold(f64::INFINITY, f64::min);
    if above.len() < 2 || !(max > min) {
        return Err(Error::Fit(
            "Weibull fit needs at least two distinct values above the threshold (minimum spread not met)".into(),
        ));
    }
    // Values at the threshold have zero conditional density and are dropped.
    // Work on values scaled to max 1 so x^k stays representable.
    let xs: Vec<f64> = above.iter().map(|v| v / max).collect();
    let t = threshold / max;
    let n = xs.len() as f64;
    let sum_ln: f64 = xs.iter().map(|x| x.ln()).sum();
    let profile = |log_k: f64| -> (f64, f64) {
        let k = log_k.exp();
        let tk = if t > 0.0 { t.powf(k) } else { 0.0 };
        let s: f64 = xs.iter().map(|&x| x.powf(k) - tk).sum();
        if !(s > 0.0) {
            return (f64::NEG_INFINITY, s);
        }
        (n * k.ln() - n * (s / n).ln() + (k - 1.0) * sum_ln - n, s)
    };

    let steps = 400;
    let grid = |i: usize| LOG_SHAPE_MIN + (LOG_SHAPE_MAX - LOG_SHAPE_MIN) * i as f64 / steps as f64;
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for i in 0..=steps {
        let ll = profile(grid(i)).0;
        if ll > best_ll {
            best_ll = ll;
            best = i;
        }
    }
    if !best_ll.is_finite() {
        return Err(Error::Fit("Weibull likelihood is degenerate for this sample".into()));
    }
    let (mut lo, mut hi) = (grid(best.saturating_sub(1)), grid((best + 1).min(steps)));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if profile(a).0 < profile(b).0 {
            lo = a;
        } else {
            hi = b;
        }
    }
    let log_k = (lo + hi) / 2.0;
    let k = log_k.exp();
    let s = profile(log_k).1;
    let scale = (s / n).powf(1.0 / k) * max;
    Ok(WeibullModel {
        shape: k,
        scale,
        shift: threshold,
    })
}
