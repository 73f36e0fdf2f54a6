//! Estimators used by the Monte Carlo checks: pairwise sums, means with
//! standard errors, k-statistics with grouped-jackknife errors, and the
//! goodness-of-fit statistics (Kolmogorov–Smirnov, Anderson–Darling).
//!
//! All reductions go through [`pairwise_sum`] so results do not depend on
//! how replicas were scheduled.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Multiplier applied to standard errors in every statistical acceptance check.
pub const SE_THRESHOLD: f64 = 4.0;

/// Recursive pairwise summation with a fixed split order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// A point estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    /// Sample mean with standard error `s / sqrt(n)`.
    pub fn of_mean(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        Self {
            value: mean(xs),
            se: (variance(xs) / n).sqrt(),
        }
    }

    /// `|value - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }

    /// Distance to `target` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.se == 0.0 {
            if self.value == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - target) / self.se
        }
    }
}

/// Pearson correlation coefficient.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let syy: Vec<f64> = ys.iter().map(|y| (y - my) * (y - my)).collect();
    pairwise_sum(&sxy) / (pairwise_sum(&sxx) * pairwise_sum(&syy)).sqrt()
}

/// Joint k-statistic (unbiased joint cumulant estimator) of the columns in
/// `samples`; `samples[j]` holds the draws of the j-th variable. Orders 1–4.
pub fn joint_k_statistic(samples: &[&[f64]]) -> f64 {
    let order = samples.len();
    assert!((1..=4).contains(&order), "k-statistics are implemented up to order 4");
    let n = samples[0].len();
    assert!(samples.iter().all(|s| s.len() == n));
    let nf = n as f64;
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let m = mean(s);
            s.iter().map(|x| x - m).collect()
        })
        .collect();
    let central = |idx: &[usize]| -> f64 {
        let prods: Vec<f64> = (0..n)
            .map(|r| idx.iter().map(|&j| centered[j][r]).product())
            .collect();
        pairwise_sum(&prods) / nf
    };
    match order {
        1 => mean(samples[0]),
        2 => central(&[0, 1]) * nf / (nf - 1.0),
        3 => central(&[0, 1, 2]) * nf * nf / ((nf - 1.0) * (nf - 2.0)),
        _ => {
            let m4 = central(&[0, 1, 2, 3]);
            let pairs = central(&[0, 1]) * central(&[2, 3])
                + central(&[0, 2]) * central(&[1, 3])
                + central(&[0, 3]) * central(&[1, 2]);
            nf * nf * ((nf + 1.0) * m4 - (nf - 1.0) * pairs)
                / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0))
        }
    }
}

/// Grouped (delete-a-group) jackknife standard error of `stat`.
///
/// The draws are split into `groups` contiguous blocks; the statistic is
/// recomputed with each block removed.
pub fn grouped_jackknife<F>(samples: &[&[f64]], groups: usize, stat: F) -> Estimate
where
    F: Fn(&[&[f64]]) -> f64,
{
    let n = samples[0].len();
    let groups = groups.clamp(2, n);
    let full = stat(samples);
    let bounds: Vec<usize> = (0..=groups).map(|g| g * n / groups).collect();
    let leave_out: Vec<f64> = (0..groups)
        .map(|g| {
            let kept: Vec<Vec<f64>> = samples
                .iter()
                .map(|s| {
                    s[..bounds[g]]
                        .iter()
                        .chain(&s[bounds[g + 1]..])
                        .copied()
                        .collect()
                })
                .collect();
            let refs: Vec<&[f64]> = kept.iter().map(Vec::as_slice).collect();
            stat(&refs)
        })
        .collect();
    let m = mean(&leave_out);
    let dev: Vec<f64> = leave_out.iter().map(|x| (x - m) * (x - m)).collect();
    let g = groups as f64;
    Estimate::new(full, ((g - 1.0) / g * pairwise_sum(&dev)).sqrt())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and N(mean, sd²).
pub fn ks_distance_normal(xs: &[f64], mean: f64, sd: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mean) / sd);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (f - lo).abs().max((hi - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level 1%.
pub fn ks_two_sample_critical_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.628 * ((na + nb) / (na * nb)).sqrt()
}

/// Anderson–Darling statistic for normality with estimated mean and variance,
/// including the small-sample correction `A² (1 + 0.75/n + 2.25/n²)`.
pub fn anderson_darling_normal(xs: &[f64]) -> f64 {
    let n = xs.len();
    let nf = n as f64;
    let m = mean(xs);
    let sd = variance(xs).sqrt();
    let mut z: Vec<f64> = xs.iter().map(|x| normal_cdf((x - m) / sd)).collect();
    z.sort_by(f64::total_cmp);
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let lo = z[i].clamp(1e-300, 1.0);
            let hi = (1.0 - z[n - 1 - i]).clamp(1e-300, 1.0);
            (2 * i + 1) as f64 * (lo.ln() + hi.ln())
        })
        .collect();
    let a2 = -nf - pairwise_sum(&terms) / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

/// 1% critical value of the corrected Anderson–Darling normality statistic.
pub const ANDERSON_DARLING_CRITICAL_1PCT: f64 = 1.035;

/// Least-squares slope of `ys` against `xs` with the standard error obtained
/// by propagating per-point standard errors of `ys`.
pub fn fitted_slope(xs: &[f64], ys: &[f64], y_se: &[f64]) -> Estimate {
    let mx = mean(xs);
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let sxx = pairwise_sum(&sxx);
    let coeff: Vec<f64> = xs.iter().map(|x| (x - mx) / sxx).collect();
    let slope: Vec<f64> = coeff.iter().zip(ys).map(|(c, y)| c * y).collect();
    let var: Vec<f64> = coeff.iter().zip(y_se).map(|(c, s)| c * c * s * s).collect();
    Estimate::new(pairwise_sum(&slope), pairwise_sum(&var).sqrt())
}
