//! Order-stable accumulation and Monte Carlo summaries.

use serde::Serialize;

/// Neumaier-compensated sum. Callers feed values in a fixed order so the
/// result is reproducible bit for bit.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
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

pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    stable_sum(values.iter().copied()) / values.len() as f64
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl GenEstimate {
    /// Mean and `sd / sqrt(n)` with the unbiased sample deviation; a single
    /// sample reports zero error.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "no samples");
        let mean = stable_mean(values);
        let std_error = if n > 1 {
            let ss = stable_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        GenEstimate {
            mean,
            std_error,
            trials: n,
        }
    }

    pub fn exact(value: f64) -> Self {
        GenEstimate {
            mean: value,
            std_error: 0.0,
            trials: 1,
        }
    }

    /// `|self - other| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &GenEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.std_error.hypot(other.std_error)
    }

    pub fn within_se_of(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Two-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub critical: f64,
    /// `statistic <= critical`: no evidence against equal laws at `alpha`.
    pub accepts: bool,
}

/// Asymptotic two-sample KS test at level `alpha`, with critical value
/// `sqrt(-ln(alpha / 2) / 2) * sqrt((n + m) / (n m))`.
pub fn ks_two_sample(x: &[f64], y: &[f64], alpha: f64) -> KsTest {
    assert!(!x.is_empty() && !y.is_empty(), "empty sample");
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let critical = (-(alpha / 2.0).ln() / 2.0).sqrt() * ((n + m) / (n * m)).sqrt();
    KsTest {
        statistic: d,
        critical,
        accepts: d <= critical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut v = vec![1.0e16, 1.0, -1.0e16];
        v.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(stable_sum(v.iter().copied()), 11.0);
    }

    #[test]
    fn standard_error_matches_definition() {
        let e = GenEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.std_error - sd / 2.0).abs() < 1e-15);
        assert_eq!(GenEstimate::from_samples(&[3.0]).std_error, 0.0);
    }
    #[test]
    fn ks_detects_shift_only() {
        let x: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let y: Vec<f64> = (0..1500).map(|i| (i as f64 + 0.5) / 1500.0).collect();
        assert!(ks_two_sample(&x, &y, 1e-3).accepts);
        let z: Vec<f64> = y.iter().map(|v| v + 0.2).collect();
        let t = ks_two_sample(&x, &z, 1e-3);
        assert!(!t.accepts && (t.statistic - 0.2).abs() < 1e-3);
    }
}
