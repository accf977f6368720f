use serde::Serialize;

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-12;

/// A probability vector over `0..K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Argument("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Argument(format!("probability {p} is not a finite nonnegative number")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Argument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Argument("weights must have a positive finite sum".into()));
        }
        DiscreteDist::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn point_mass(k: usize, size: usize) -> Result<Self> {
        if k >= size {
            return Err(Error::Argument(format!("symbol {k} outside support of size {size}")));
        }
        let mut probs = vec![0.0; size];
        probs[k] = 1.0;
        Ok(DiscreteDist { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.support_size() != q.support_size() {
        return Err(Error::Argument(format!(
            "support sizes differ: {} vs {}",
            p.support_size(),
            q.support_size()
        )));
    }
    Ok(())
}

/// Total variation, `(1/2) sum |p_i - q_i|`.
pub fn tv(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `KL(p || q)` in nats; `+inf` when `p` is not absolutely continuous
/// with respect to `q`.
pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += a * (a / b).ln();
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerCheck {
    pub tv: f64,
    /// `sqrt(KL / 2)`.
    pub kl_bound: f64,
    pub holds: bool,
}

pub fn pinsker_check(p: &DiscreteDist, q: &DiscreteDist) -> Result<PinskerCheck> {
    let t = tv(p, q)?;
    let kl_bound = (kl(p, q)? / 2.0).sqrt();
    Ok(PinskerCheck {
        tv: t,
        kl_bound,
        holds: t <= kl_bound + 1e-12,
    })
}
