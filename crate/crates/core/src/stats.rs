//! Summary statistics and goodness-of-fit tests.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{LabError, Result};

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(x: &[f64]) -> f64 {
    neumaier_sum(x.iter().copied()) / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    neumaier_sum(x.iter().map(|v| (v - m) * (v - m))) / (x.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn standard_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Delta-method standard error of the sample variance, `sqrt((m4 - s^4) / n)`.
pub fn variance_standard_error(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = neumaier_sum(x.iter().map(|v| (v - m).powi(2))) / n;
    let m4 = neumaier_sum(x.iter().map(|v| (v - m).powi(4))) / n;
    ((m4 - m2 * m2).max(0.0) / n).sqrt()
}

/// Sample raw moment `mean(x^k)` with its standard error.
pub fn raw_moment(x: &[f64], k: i32) -> Estimate {
    let powers: Vec<f64> = x.iter().map(|v| v.powi(k)).collect();
    Estimate { value: mean(&powers), se: standard_error(&powers) }
}

/// A point estimate with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of_mean(x: &[f64]) -> Self {
        Self { value: mean(x), se: standard_error(x) }
    }

    pub fn of_variance(x: &[f64]) -> Self {
        Self { value: variance(x), se: variance_standard_error(x) }
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.se
    }
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let sxy = neumaier_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = neumaier_sum(x.iter().map(|a| (a - mx).powi(2)));
    let syy = neumaier_sum(y.iter().map(|b| (b - my).powi(2)));
    sxy / (sxx * syy).sqrt()
}

/// Sample covariance with the standard error of the mean of centred products.
pub fn covariance(x: &[f64], y: &[f64]) -> Estimate {
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let n = x.len() as f64;
    let e = Estimate::of_mean(&prods);
    Estimate { value: e.value * n / (n - 1.0), se: e.se }
}

pub fn correlation_matrix(columns: &[&[f64]]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|a| columns.iter().map(|b| if std::ptr::eq(*a, *b) { 1.0 } else { pearson(a, b) }).collect())
        .collect()
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy = neumaier_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = neumaier_sum(x.iter().map(|a| (a - mx).powi(2)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Jarque-Bera normality statistic; asymptotically chi-square with 2 degrees of freedom.
pub fn jarque_bera(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = neumaier_sum(x.iter().map(|v| (v - m).powi(2))) / n;
    let m3 = neumaier_sum(x.iter().map(|v| (v - m).powi(3))) / n;
    let m4 = neumaier_sum(x.iter().map(|v| (v - m).powi(4))) / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    n / 6.0 * (skew * skew + 0.25 * (kurt - 3.0).powi(2))
}

/// Upper 1 - alpha point of the chi-square law with two degrees of freedom.
pub fn chi2_2_quantile(significance: f64) -> f64 {
    -2.0 * significance.ln()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of the Kolmogorov distribution, `P(K <= x)`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * pi2 / (8.0 * x * x)).exp()
            })
            .sum();
        ((2.0 * std::f64::consts::PI).sqrt() / x * s).min(1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * x * x).exp()
            })
            .sum();
        (1.0 - 2.0 * s).max(0.0)
    }
}

/// `x` with `P(K <= x) = p`, by bisection.
pub fn kolmogorov_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (1e-3, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub distance: f64,
    /// Asymptotic critical distance at the requested significance.
    pub threshold_at_significance: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn rejects(&self) -> bool {
        self.distance > self.threshold_at_significance
    }
}

pub const KS_MIN_SAMPLES: usize = 50;

/// One-sample KS test of `samples` against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, significance: f64) -> Result<KsResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(LabError::TooFewSamples { required: KS_MIN_SAMPLES, got: samples.len() });
    }
    check_significance(significance)?;
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    Ok(KsResult {
        distance: d,
        threshold_at_significance: kolmogorov_quantile(1.0 - significance) / sqrt_n,
        p_value: 1.0 - kolmogorov_cdf(sqrt_n * d),
        n: v.len(),
    })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64], significance: f64) -> Result<KsResult> {
    let min = a.len().min(b.len());
    if min < KS_MIN_SAMPLES {
        return Err(LabError::TooFewSamples { required: KS_MIN_SAMPLES, got: min });
    }
    check_significance(significance)?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let scale = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        distance: d,
        threshold_at_significance: kolmogorov_quantile(1.0 - significance) / scale,
        p_value: 1.0 - kolmogorov_cdf(scale * d),
        n: min,
    })
}

fn check_significance(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(LabError::Parameter(format!("significance must lie in (0, 1), got {s}")))
    }
}

/// Sample distance correlation (Szekely-Rizzo), a dependence measure that vanishes only under
/// independence. Quadratic in the sample size.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let centred = |v: &[f64]| {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (v[i] - v[j]).abs();
            }
        }
        let row: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let grand = row.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += grand - row[i] - row[j];
            }
        }
        a
    };
    let a = centred(x);
    let b = centred(y);
    let dcov = |p: &[f64], q: &[f64]| neumaier_sum(p.iter().zip(q).map(|(u, v)| u * v)) / (n * n) as f64;
    let vxy = dcov(&a, &b);
    let vxx = dcov(&a, &a);
    let vyy = dcov(&b, &b);
    if vxx * vyy <= 0.0 {
        0.0
    } else {
        (vxy / (vxx * vyy).sqrt()).max(0.0).sqrt()
    }
}
