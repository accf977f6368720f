//! Gaussian location model: every layer adds independent `N(0, sigma_l^2)`
//! noise to its parent, and the hypothesis is the leaf average.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{BoundFamily, BoundReport, LayerContribution};
use crate::divergences::{cmi_gaussian_mixture, GaussianMixturePair};
use crate::error::{Error, Result};
use crate::hierarchy::Kernel;
use crate::risk::{Algorithm, HierarchicalModel, Metric, MonteCarlo};
use crate::stats::{stable_sum, GenEstimate};
use crate::stream::{Purpose, Streams};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmParams {
    pub theta: f64,
    pub sigmas: Vec<f64>,
    pub topology: Topology,
}

impl GlmParams {
    pub fn new(theta: f64, sigmas: Vec<f64>, topology: Topology) -> Result<Self> {
        if sigmas.len() != topology.depth() {
            return Err(Error::Config(format!(
                "{} sigmas for a depth-{} topology",
                sigmas.len(),
                topology.depth()
            )));
        }
        if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {s}")));
        }
        if !theta.is_finite() {
            return Err(Error::Config("theta must be finite".into()));
        }
        Ok(GlmParams {
            theta,
            sigmas,
            topology,
        })
    }

    /// `V = sum sigma_l^2`.
    pub fn total_variance(&self) -> f64 {
        stable_sum(self.sigmas.iter().map(|s| s * s))
    }

    /// `Delta = sum sigma_l^2 / N_l`.
    pub fn averaged_variance(&self) -> f64 {
        stable_sum(
            self.sigmas
                .iter()
                .enumerate()
                .map(|(i, s)| s * s / self.topology.size(i + 1) as f64),
        )
    }

    pub fn model(&self) -> HierarchicalModel {
        HierarchicalModel::new(
            self.topology.clone(),
            Kernel::gaussian(self.sigmas.clone()).expect("sigmas validated"),
            self.theta,
        )
        .expect("sigmas match topology")
    }
}

/// `sqrt(2/pi) (sqrt(V + Delta) - sqrt(V - Delta))` for the leaf average
/// under absolute loss.
pub fn glm_true_gen(p: &GlmParams) -> f64 {
    let v = p.total_variance();
    if v == 0.0 {
        return 0.0;
    }
    let d = p.averaged_variance();
    (2.0 / PI).sqrt() * ((v + d).sqrt() - (v - d).max(0.0).sqrt())
}

/// First-order expansion in `Delta`: `sqrt(2/pi) Delta / sqrt(V)`.
pub fn glm_taylor_gen(p: &GlmParams) -> Result<f64> {
    let v = p.total_variance();
    if v == 0.0 {
        return Err(Error::Domain("the expansion needs V > 0".into()));
    }
    Ok((2.0 / PI).sqrt() * p.averaged_variance() / v.sqrt())
}

/// Closed-form Wasserstein bound with Lipschitz constant 1: layer `l`
/// contributes `2 sigma_l / (sqrt(pi) N_l)`.
pub fn glm_wasserstein_bound(p: &GlmParams) -> BoundReport {
    let contributions: Vec<f64> = p
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, s)| 2.0 * s / (PI.sqrt() * p.topology.size(i + 1) as f64))
        .collect();
    BoundReport::exact(BoundFamily::GlmWasserstein, Some(Metric::Absolute), &contributions)
        .with_lipschitz(1.0)
}

/// CMI bound for the (noisy) leaf average on the GLM.
///
/// Given the rest of the tree, the pair at a layer-`l` node and `U = u`,
/// the hypothesis is Gaussian with mean shifted by `mu_u / N_l` and
/// variance `sum_{k > l} sigma_k^2 / (N_k N_l) + noise_sd^2`, so the node's
/// information is that of a two-component mixture. The pair difference is
/// drawn by Monte Carlo; the mixture information is integrated by
/// quadrature.
pub fn glm_cmi_bound_mc(p: &GlmParams, algorithm: &Algorithm, mc: &MonteCarlo) -> Result<BoundReport> {
    let noise_sd = match algorithm {
        Algorithm::LeafAverage => 0.0,
        Algorithm::NoisyLeafAverage { noise_sd } => *noise_sd,
        Algorithm::HierarchicalDp(_) => {
            return Err(Error::Unsupported(
                "the Gaussian CMI bound needs a Gaussian hypothesis".into(),
            ))
        }
    };
    algorithm.validate(&p.topology)?;
    if mc.outer_trials < 2 {
        return Err(Error::Argument("at least two draws are required".into()));
    }
    let t = &p.topology;
    let depth = t.depth();
    let sizes: Vec<f64> = (0..=depth).map(|l| t.size(l) as f64).collect();
    let inner_sd: Vec<f64> = (1..=depth)
        .map(|l| {
            let v = stable_sum((l + 1..=depth).map(|k| {
                let s = p.sigmas[k - 1];
                s * s / (sizes[k] * sizes[l])
            }));
            (v + noise_sd * noise_sd).sqrt()
        })
        .collect();
    let streams = Streams::new(mc.seed);
    let per_draw: Vec<Vec<f64>> = (0..mc.outer_trials as u64)
        .into_par_iter()
        .map(|d| {
            (1..=depth)
                .map(|l| {
                    let sigma = p.sigmas[l - 1];
                    let terms = (0..t.size(l)).map(|off| {
                        let mut rng = streams.rng(d, l, off, Purpose::Pair);
                        let z1: f64 = rng.sample(StandardNormal);
                        let z2: f64 = rng.sample(StandardNormal);
                        let shift = sigma * (z1 - z2) / sizes[l];
                        node_information(shift, inner_sd[l - 1]).map(|i| (2.0 * i).sqrt())
                    });
                    stable_sum(terms.map(|r| r.expect("valid mixture"))) / sizes[l]
                })
                .collect()
        })
        .collect();
    Ok(report_from_draws(BoundFamily::Cmi, None, &per_draw).with_loss_bound((0.0, 1.0)))
}

/// `I(W; U)` for means `0` and `shift` with common deviation `s`; point
/// masses when `s == 0`.
fn node_information(shift: f64, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(if shift != 0.0 { std::f64::consts::LN_2 } else { 0.0 });
    }
    cmi_gaussian_mixture(&GaussianMixturePair::new(0.0, shift, s)?, 64)
}

/// Builds a report from per-draw layer contributions (`draws x L`).
pub(super) fn report_from_draws(
    family: BoundFamily,
    metric: Option<Metric>,
    per_draw: &[Vec<f64>],
) -> BoundReport {
    let depth = per_draw[0].len();
    let per_layer = (0..depth)
        .map(|l| {
            let column: Vec<f64> = per_draw.iter().map(|row| row[l]).collect();
            let e = GenEstimate::from_samples(&column);
            LayerContribution {
                layer: l + 1,
                contribution: e.mean,
                std_error: e.std_error,
            }
        })
        .collect();
    let totals: Vec<f64> = per_draw.iter().map(|row| stable_sum(row.iter().copied())).collect();
    BoundReport::new(family, metric, per_layer, GenEstimate::from_samples(&totals).std_error)
}
