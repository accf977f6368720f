//! One-dimensional Wasserstein-1 distances between empirical measures and
//! the Kantorovich–Rubinstein dual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::dist::{tv, DiscreteDist};
use crate::error::{Error, Result};
use crate::stats::{stable_sum, GenEstimate};

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("empty sample".into()));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Argument("sample contains NaN".into()));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Exact W1 between the empirical measures of `x` and `y` (any order).
///
/// Equal sizes pair order statistics; unequal sizes integrate the
/// difference of the quantile functions over the merged breakpoint grid.
pub fn w1_empirical(x: &[f64], y: &[f64]) -> Result<f64> {
    let x = sorted(x)?;
    let y = sorted(y)?;
    let (n, m) = (x.len(), y.len());
    if n == m {
        return Ok(stable_sum(x.iter().zip(&y).map(|(a, b)| (a - b).abs())) / n as f64);
    }
    // Breakpoints i/n and j/m on the common denominator n*m.
    let (mut i, mut j, mut prev) = (0usize, 0usize, 0u128);
    let mut acc = Vec::with_capacity(n + m);
    while i < n && j < m {
        let a = (i as u128 + 1) * m as u128;
        let b = (j as u128 + 1) * n as u128;
        let next = a.min(b);
        acc.push((next - prev) as f64 * (x[i] - y[j]).abs());
        prev = next;
        if a == next {
            i += 1;
        }
        if b == next {
            j += 1;
        }
    }
    Ok(stable_sum(acc) / (n as f64 * m as f64))
}

/// W1 under the discrete metric, which is the total variation distance.
pub fn w1_discrete_metric(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    tv(p, q)
}

/// Total variation between the empirical measures of `x` and `y`, values
/// compared exactly.
pub fn tv_empirical(x: &[f64], y: &[f64]) -> Result<f64> {
    let x = sorted(x)?;
    let y = sorted(y)?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut acc = Vec::new();
    while i < x.len() || j < y.len() {
        let v = match (x.get(i), y.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        let (mut cx, mut cy) = (0usize, 0usize);
        while i < x.len() && x[i] == v {
            cx += 1;
            i += 1;
        }
        while j < y.len() && y[j] == v {
            cy += 1;
            j += 1;
        }
        acc.push((cx as f64 / n - cy as f64 / m).abs());
    }
    Ok(0.5 * stable_sum(acc))
}

/// Piecewise-linear function through `knots`, continued beyond the first
/// and last knot with the given end slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    knots: Vec<(f64, f64)>,
    left_slope: f64,
    right_slope: f64,
}

impl TestFunction {
    pub fn new(knots: Vec<(f64, f64)>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Argument("a test function needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Argument("knots must be strictly increasing".into()));
        }
        Ok(TestFunction {
            knots,
            left_slope,
            right_slope,
        })
    }

    /// `f(t) = sign * t`.
    pub fn linear(sign: f64) -> Self {
        TestFunction {
            knots: vec![(0.0, 0.0)],
            left_slope: sign,
            right_slope: sign,
        }
    }

    /// `f(t) = sign * clamp(t, lo, hi)`.
    pub fn clipped(sign: f64, lo: f64, hi: f64) -> Result<Self> {
        TestFunction::new(vec![(lo, sign * lo), (hi, sign * hi)], 0.0, 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let (x0, y0) = k[0];
        let (xn, yn) = k[k.len() - 1];
        if t <= x0 {
            return y0 + self.left_slope * (t - x0);
        }
        if t >= xn {
            return yn + self.right_slope * (t - xn);
        }
        let pos = k.partition_point(|&(x, _)| x <= t);
        let (xa, ya) = k[pos - 1];
        let (xb, yb) = k[pos];
        ya + (yb - ya) * (t - xa) / (xb - xa)
    }

    /// Largest absolute slope over all pieces.
    pub fn max_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(self.left_slope.abs().max(self.right_slope.abs()), f64::max)
    }
}

/// A 1-Lipschitz function whose dual value equals the primal W1 between
/// the empirical measures of `x` and `y`: its slope is the sign of
/// `F_y - F_x` between consecutive sample points.
pub fn kantorovich_potential(x: &[f64], y: &[f64]) -> Result<TestFunction> {
    let xs = sorted(x)?;
    let ys = sorted(y)?;
    let mut grid: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let cdf = |s: &[f64], t: f64| s.partition_point(|&v| v <= t) as f64 / s.len() as f64;
    let mut knots = vec![(grid[0], 0.0)];
    for w in grid.windows(2) {
        let slope = (cdf(&ys, w[0]) - cdf(&xs, w[0])).signum();
        let (_, last) = knots[knots.len() - 1];
        knots.push((w[1], last + slope * (w[1] - w[0])));
    }
    TestFunction::new(knots, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KrCheck {
    pub primal: f64,
    pub dual_lower: f64,
    pub holds: bool,
}

/// Compares the primal W1 with the best dual value over `family`.
pub fn kr_duality_check(x: &[f64], y: &[f64], family: &[TestFunction]) -> Result<KrCheck> {
    if family.is_empty() {
        return Err(Error::Argument("empty test-function family".into()));
    }
    if let Some(f) = family.iter().find(|f| f.max_slope() > 1.0 + 1e-9) {
        return Err(Error::Argument(format!(
            "test function is not 1-Lipschitz (slope {})",
            f.max_slope()
        )));
    }
    let primal = w1_empirical(x, y)?;
    let mean = |s: &[f64], f: &TestFunction| stable_sum(s.iter().map(|&t| f.eval(t))) / s.len() as f64;
    let dual_lower = family
        .iter()
        .map(|f| mean(x, f) - mean(y, f))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(KrCheck {
        primal,
        dual_lower,
        holds: dual_lower <= primal + 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureCheck {
    /// `W(1/2 P1 + 1/2 P2, P1)`.
    pub left: f64,
    /// `1/2 W(P2, P1)`.
    pub right: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Checks `W(1/2 P1 + 1/2 P2, P1) <= 1/2 W(P2, P1)` on samples, the
/// mixture represented by pooling both samples.
pub fn mixture_wasserstein_check(p1: &[f64], p2: &[f64]) -> Result<MixtureCheck> {
    let pooled: Vec<f64> = p1.iter().chain(p2).copied().collect();
    let left = w1_empirical(&pooled, p1)?;
    let right = 0.5 * w1_empirical(p2, p1)?;
    // Sampling noise of the right side from the sorted coupling.
    let a = sorted(p1)?;
    let b = sorted(p2)?;
    let k = a.len().min(b.len());
    let tolerance = if k > 1 {
        let diffs: Vec<f64> = (0..k)
            .map(|i| 0.5 * (a[i * a.len() / k] - b[i * b.len() / k]).abs())
            .collect();
        3.0 * GenEstimate::from_samples(&diffs).std_error
    } else {
        0.0
    };
    Ok(MixtureCheck {
        left,
        right,
        tolerance,
        holds: left <= right + tolerance + 1e-12 * (1.0 + right),
    })
}

/// The same check for two Gaussians, each represented by `n` draws.
pub fn mixture_wasserstein_check_gaussian(
    (m1, s1): (f64, f64),
    (m2, s2): (f64, f64),
    n: usize,
    seed: u64,
) -> Result<MixtureCheck> {
    let normal = |m: f64, s: f64| {
        Normal::new(m, s).map_err(|e| Error::Argument(format!("bad Gaussian ({m}, {s}): {e}")))
    };
    let (d1, d2) = (normal(m1, s1)?, normal(m2, s2)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| d1.sample(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|_| d2.sample(&mut rng)).collect();
    mixture_wasserstein_check(&x, &y)
}
