//! Tail-index and distributional estimators.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{self, tags};

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Hill fit of a power-law upper tail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub n_samples: usize,
    pub k_order: usize,
    pub s_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `x^{s_hat} * P(X > x)` at the threshold `x = X_(k+1)`.
    pub k_inf_hat: f64,
}

/// Default Hill order: `floor(sqrt(n))`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt() as usize).max(1)
}

/// Hill estimate on the `k` largest samples, `k / sum log(X_(i) / X_(k+1))`.
fn hill_point(samples: &mut [f64], k: usize) -> Option<(f64, f64)> {
    let n = samples.len();
    // Partition so that samples[n-k-1] is the (k+1)-th largest and everything after is larger.
    let pivot = n - k - 1;
    samples.select_nth_unstable_by(pivot, |a, b| a.total_cmp(b));
    let threshold = samples[pivot];
    let sum: f64 = samples[pivot + 1..].iter().map(|&x| (x / threshold).ln()).sum();
    if sum > 0.0 && sum.is_finite() {
        Some((k as f64 / sum, threshold))
    } else {
        None
    }
}

/// Hill estimator with a 95% percentile-bootstrap interval from
/// [`BOOTSTRAP_RESAMPLES`] resamples drawn from `seed`.
pub fn hill_estimate(samples: &[f64], k_order: usize, seed: u64) -> Result<TailFit> {
    let n = samples.len();
    if let Some(x) = samples.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("Hill needs positive finite samples, got {x}")));
    }
    if k_order == 0 || 2 * k_order >= n {
        return Err(Error::InvalidArgument(format!("k = {k_order} must satisfy 0 < k < n/2 = {}", n / 2)));
    }
    let mut work = samples.to_vec();
    let (s_hat, threshold) = hill_point(&mut work, k_order)
        .ok_or_else(|| Error::Degenerate("zero log spacings in the upper tail".into()))?;
    let boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .filter_map(|b| {
            let mut r = rng::stream(seed, tags::BOOT + b as u64);
            let mut re: Vec<f64> = (0..n).map(|_| samples[r.random_range(0..n)]).collect();
            hill_point(&mut re, k_order).map(|p| p.0)
        })
        .collect();
    let (mut lo, mut hi) = percentile_interval(&boots, 0.95).unwrap_or((s_hat, s_hat));
    lo = lo.min(s_hat);
    hi = hi.max(s_hat);
    let survival = k_order as f64 / n as f64;
    Ok(TailFit {
        n_samples: n,
        k_order,
        s_hat,
        ci_low: lo,
        ci_high: hi,
        k_inf_hat: threshold.powf(s_hat) * survival,
    })
}

fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < v.len() { v[i] * (1.0 - f) + v[i + 1] * f } else { v[i] }
    };
    let a = (1.0 - level) / 2.0;
    Some((q(a), q(1.0 - a)))
}

/// `Phi(x)` through the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Sup-distance between the empirical CDF of `sample` and a continuous `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    let v = sorted(sample);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < v.len() {
        let x = v[i];
        let mut j = i;
        while j < v.len() && v[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let (x, y) = (sorted(a), sorted(b));
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() || j < y.len() {
        let v = match (x.get(i), y.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < x.len() && x[i] == v {
            i += 1;
        }
        while j < y.len() && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// KS distance between `sample_n` and `2^{-1/s} * sample_2n`. A common
/// `s`-stable limit of `n^{-1/s} S_n` makes this small.
pub fn scaling_stability(sample_n: &[f64], sample_2n: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("s = {s} must be positive")));
    }
    if sample_n.iter().chain(sample_2n).any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("scaling check needs positive samples".into()));
    }
    let scale = 2f64.powf(-1.0 / s);
    let rescaled: Vec<f64> = sample_2n.iter().map(|&x| x * scale).collect();
    Ok(ks_two_sample(sample_n, &rescaled))
}

/// Least-squares fit of log survival against log level over an upper-quantile band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLogFit {
    /// Estimates `-s`.
    pub slope: f64,
    /// Estimates `log K`.
    pub intercept: f64,
    /// Relative curvature `|c| * span / |slope|` of a quadratic fit in `log x`.
    pub curvature: f64,
    /// `curvature <= CURVATURE_MAX`.
    pub power_law: bool,
    pub points: usize,
}

pub const CURVATURE_MAX: f64 = 0.1;
pub const MIN_LOGLOG_SAMPLES: usize = 1000;

/// Fits `log P(X > x) = intercept + slope * log x` on the order statistics
/// whose survival lies in `[q_lo, q_hi]` (default band: 10% down to 1%).
pub fn survival_loglog_fit(samples: &[f64], quantile_range: (f64, f64)) -> Result<LogLogFit> {
    let (q_hi, q_lo) = quantile_range;
    if samples.len() < MIN_LOGLOG_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "log-log fit needs at least {MIN_LOGLOG_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0) {
        return Err(Error::Degenerate(format!("quantile band ({q_hi}, {q_lo})")));
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive samples".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let n = v.len() as f64;
    let lo_rank = (q_lo * n).ceil().max(1.0) as usize;
    let hi_rank = (q_hi * n).floor() as usize;
    let pts: Vec<(f64, f64)> = (lo_rank..=hi_rank)
        .map(|i| (v[i - 1].ln(), (i as f64 / n).ln()))
        .collect();
    let span = pts.first().map(|p| p.0).unwrap_or(0.0) - pts.last().map(|p| p.0).unwrap_or(0.0);
    if pts.len() < 3 || !(span > 0.0) {
        return Err(Error::Degenerate("no spread in the fitted band".into()));
    }
    let (slope, intercept) = linear_fit(&pts);
    let (_, b1, c2) = quadratic_fit(&pts);
    let curvature = c2.abs() * span / b1.abs().max(f64::MIN_POSITIVE);
    Ok(LogLogFit { slope, intercept, curvature, power_law: curvature <= CURVATURE_MAX, points: pts.len() })
}

/// Ordinary least squares `y = a + b x`; returns `(b, a)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Least squares `y = a + b u + c u^2` with `u` centred; returns `(a, b, c)`,
/// `b` being the slope at the centre.
fn quadratic_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let u = x - mx;
        s1 += u;
        s2 += u * u;
        s3 += u * u * u;
        s4 += u * u * u * u;
        t0 += y;
        t1 += u * y;
        t2 += u * u * y;
    }
    // Normal equations, 3x3, by Cramer's rule.
    let m = [[n, s1, s2], [s1, s2, s3], [s2, s3, s4]];
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(m);
    let col = |k: usize| {
        let mut mm = m;
        let t = [t0, t1, t2];
        for r in 0..3 {
            mm[r][k] = t[r];
        }
        det3(mm) / d
    };
    (col(0), col(1), col(2))
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Median (average of the middle pair for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
