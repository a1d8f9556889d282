//! Pareto-smoothed importance sampling.
//!
//! The largest `ceil(min(0.2 M, 3 sqrt(M)))` log-weights are replaced by
//! quantiles of a generalized Pareto distribution fitted to their excess
//! over the tail cutoff, using the Zhang and Stephens profile estimator
//! with a weakly informative shrinkage of the shape towards 0.5.

use serde::{Deserialize, Serialize};

/// Smallest sample for which smoothing is attempted.
pub const MIN_SAMPLES: usize = 25;

/// Pareto tail-shape diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Khat {
    /// Too few draws for a tail fit.
    Unavailable,
    /// The tail is too short or flat to fit (for example, equal weights).
    Degenerate,
    Value(f64),
}

impl Khat {
    pub fn value(self) -> Option<f64> {
        match self {
            Khat::Value(k) => Some(k),
            _ => None,
        }
    }
}

impl std::fmt::Display for Khat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Khat::Unavailable => write!(f, "unavailable"),
            Khat::Degenerate => write!(f, "degenerate"),
            Khat::Value(k) => write!(f, "{k:.3}"),
        }
    }
}

/// Smooths `log_w` in place (up to an additive constant) and returns the
/// tail-shape diagnostic. Draws keep their relative order.
pub fn pareto_smooth(log_w: &mut [f64]) -> Khat {
    let n = log_w.len();
    if n < MIN_SAMPLES {
        return Khat::Unavailable;
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Khat::Degenerate;
    }
    let mut x: Vec<f64> = log_w.iter().map(|v| v - max).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let nominal = (0.2 * n as f64).min(3.0 * (n as f64).sqrt()).ceil() as usize;
    let cutoff = x[order[n - nominal - 1]].max(f64::MIN_POSITIVE.ln());
    let exp_cutoff = cutoff.exp();
    let tail: Vec<usize> = order.iter().copied().filter(|&i| x[i] > cutoff).collect();
    if tail.len() <= 4 {
        return Khat::Degenerate;
    }
    let excess: Vec<f64> = tail.iter().map(|&i| x[i].exp() - exp_cutoff).collect();
    let Some((k, sigma)) = gpd_fit(&excess) else {
        return Khat::Degenerate;
    };
    if !k.is_finite() {
        return Khat::Degenerate;
    }
    let m = tail.len();
    for (z, &i) in tail.iter().enumerate() {
        let p = (z as f64 + 0.5) / m as f64;
        let q = gpd_quantile(p, k, sigma);
        x[i] = (q + exp_cutoff).ln().min(0.0);
    }
    for (dst, v) in log_w.iter_mut().zip(&x) {
        *dst = v + max;
    }
    Khat::Value(k)
}

/// Generalized Pareto fit to positive, ascending exceedances. Returns
/// `(shape, scale)`.
pub fn gpd_fit(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n == 0 || x[n - 1] <= 0.0 {
        return None;
    }
    const PRIOR: f64 = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let xstar = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    if !(xstar > 0.0) {
        return None;
    }
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x[n - 1] + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / PRIOR / xstar)
        .collect();
    let prof: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&v| (-t * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let mut w: Vec<f64> = (0..m)
        .map(|j| 1.0 / prof.iter().map(|&l| (l - prof[j]).exp()).sum::<f64>())
        .collect();
    // Drop negligible grid weights before renormalising.
    for v in w.iter_mut() {
        if !(*v >= 10.0 * f64::EPSILON) {
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let theta_hat: f64 = theta.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / total;
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (n as f64 * k + 10.0 * 0.5) / (n as f64 + 10.0);
    (k.is_finite() && sigma.is_finite() && sigma > 0.0).then_some((k, sigma))
}

/// Quantile function of the generalized Pareto distribution.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < f64::EPSILON {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

/// Self-normalises log-weights into weights summing to one.
pub fn normalize(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    w
}

/// Effective sample size `1 / sum w^2` of normalised weights.
pub fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}
