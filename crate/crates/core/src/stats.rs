//! Summation, moments, regression and quantiles.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::new();
    for x in xs {
        s.add(x);
    }
    s.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let se = (variance(xs) / xs.len() as f64).sqrt();
    (m, se)
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_stderr(xs: &[f64], n_batches: usize) -> f64 {
    let b = n_batches.max(2).min(xs.len());
    let len = xs.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|k| mean(&xs[k * len..(k + 1) * len])).collect();
    (variance(&means) / b as f64).sqrt()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn t_quantile(p: f64, dof: f64) -> f64 {
    if !dof.is_finite() || dof > 1e7 {
        return normal_quantile(p);
    }
    StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(p)
}

/// Two-sided critical value for confidence `level` (e.g. 0.95).
pub fn z_two_sided(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// Point estimate with standard error and a confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, lo: value, hi: value }
    }

    pub fn normal(value: f64, stderr: f64, level: f64) -> Self {
        let z = z_two_sided(level);
        Self { value, stderr, lo: value - z * stderr, hi: value + z * stderr }
    }

    pub fn from_samples(xs: &[f64], level: f64) -> Self {
        let (m, se) = mean_stderr(xs);
        Self::normal(m, se, level)
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Ordinary least squares fit of y = intercept + slope * x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    pub r2: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn dof(&self) -> f64 {
        self.n as f64 - 2.0
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum(x.iter().map(|a| (a - mx) * (a - mx)));
    if !(sxx > 0.0) {
        return None;
    }
    let sxy = sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = sum(y.iter().map(|b| (b - my) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = sum(x.iter().zip(y).map(|(a, b)| {
        let r = b - intercept - slope * a;
        r * r
    }));
    let s2 = if n > 2 { sse / (n - 2) as f64 } else { 0.0 };
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LinearFit { intercept, slope, se_intercept, se_slope, r2, n })
}

/// Relative difference scaled so that values near zero compare absolutely.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(sum(xs), 2.0);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn quantiles() {
        assert_abs_diff_eq!(z_two_sided(0.95), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(t_quantile(0.975, 10.0), 2.2281388519649385, epsilon = 1e-8);
    }

    #[test]
    fn sample_variance() {
        assert_abs_diff_eq!(variance(&[1.0, 2.0, 3.0, 4.0]), 5.0 / 3.0, epsilon = 1e-15);
    }
}
