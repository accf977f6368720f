//! Mutual information between a fair binary selector and a two-component
//! Gaussian mixture with a shared variance.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMixturePair {
    pub m1: f64,
    pub m2: f64,
    pub s: f64,
}

impl GaussianMixturePair {
    pub fn new(m1: f64, m2: f64, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite() && m1.is_finite() && m2.is_finite()) {
            return Err(Error::Argument(format!("need finite means and s > 0, got s = {s}")));
        }
        Ok(GaussianMixturePair { m1, m2, s })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const WINDOW: f64 = 10.0;
const TOL: f64 = 1e-8;
const MAX_POINTS: usize = 1 << 22;

/// Simpson's rule over `[-WINDOW, WINDOW]` with `points` intervals.
fn simpson<F: Fn(f64) -> f64>(f: &F, points: usize) -> f64 {
    let h = 2.0 * WINDOW / points as f64;
    let mut acc = f(-WINDOW) + f(WINDOW);
    for k in 1..points {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(-WINDOW + k as f64 * h);
    }
    acc * h / 3.0
}

/// `I(W; U)` in nats for `U` uniform on {1, 2} and `W | U = u ~ N(m_u, s^2)`:
/// `(1/2) sum_u KL(N(m_u, s^2) || mixture)`.
///
/// Each KL term is integrated over `m_u +- 10 s` by Simpson's rule,
/// doubling `quadrature_points` until successive values differ by less
/// than `1e-8`.
pub fn cmi_gaussian_mixture(pair: &GaussianMixturePair, quadrature_points: usize) -> Result<f64> {
    if quadrature_points < 64 {
        return Err(Error::Argument(format!(
            "need at least 64 quadrature points, got {quadrature_points}"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for (mu, mv) in [(pair.m1, pair.m2), (pair.m2, pair.m1)] {
        // In units z = (w - m_u) / s: ln(phi_u / mixture) = ln 2 - softplus(r),
        // r = ln phi_v - ln phi_u = -(z d + d^2 / 2), d = (m_u - m_v) / s.
        let d = (mu - mv) / pair.s;
        let f = |z: f64| norm * (-0.5 * z * z).exp() * (ln2 - softplus(-(z * d + 0.5 * d * d)));
        let mut points = quadrature_points + quadrature_points % 2;
        let mut prev = simpson(&f, points);
        loop {
            points *= 2;
            let next = simpson(&f, points);
            let done = (next - prev).abs() < TOL || points >= MAX_POINTS;
            prev = next;
            if done {
                break;
            }
        }
        total += 0.5 * prev;
    }
    Ok(total.clamp(0.0, ln2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identical_components() {
        let p = GaussianMixturePair::new(1.0, 1.0, 0.5).unwrap();
        assert!(cmi_gaussian_mixture(&p, 64).unwrap() < 1e-12);
    }

    #[test]
    fn separated_components() {
        let p = GaussianMixturePair::new(0.0, 1000.0, 1.0).unwrap();
        assert!((cmi_gaussian_mixture(&p, 64).unwrap() - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GaussianMixturePair::new(0.0, 1.0, 0.0).is_err());
        let p = GaussianMixturePair::new(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(cmi_gaussian_mixture(&p, 32), Err(Error::Argument(_))));
    }

    #[test]
    fn monotone_and_bounded() {
        let mut last = 0.0;
        for k in 0..40 {
            let p = GaussianMixturePair::new(0.0, 0.25 * k as f64, 1.0).unwrap();
            let v = cmi_gaussian_mixture(&p, 64).unwrap();
            assert!(v >= last - 1e-9 && v <= 2f64.ln());
            last = v;
        }
    }

    #[test]
    fn agrees_with_monte_carlo() {
        let (m1, m2, s) = (0.0, 2.0, 1.0);
        let exact = cmi_gaussian_mixture(&GaussianMixturePair::new(m1, m2, s).unwrap(), 64).unwrap();
        // I(W;U) = E[ln(phi_U(W) / mixture(W))] over U uniform, W | U.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let logpdf = |w: f64, m: f64| -0.5 * ((w - m) / s).powi(2);
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let (mu, mv) = if rng.random::<bool>() { (m1, m2) } else { (m2, m1) };
                let z: f64 = rng.sample(StandardNormal);
                let w = mu + s * z;
                2f64.ln() - softplus(logpdf(w, mv) - logpdf(w, mu))
            })
            .collect();
        let est = crate::stats::GenEstimate::from_samples(&samples);
        assert!(est.within_se_of(exact, 3.0), "{exact} vs {est:?}");
    }
}
