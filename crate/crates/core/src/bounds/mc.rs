//! Monte Carlo estimates of the per-node Wasserstein terms.
//!
//! For a draw of the supersample, the selected tree supplies everything
//! outside the probed node's subtree. The hypothesis is then simulated with
//! the node's selector set to each value while sharing every other random
//! number between the two branches. Conditioning on the rest of the tree can
//! only increase the expected distance (the distance is jointly convex and
//! the rest is independent of the selector), so the estimate remains an
//! upper bound; for additive learners such as the leaf average it is exact.
//!
//! In one dimension `W(P_u, (P_1 + P_2) / 2) = W(P_1, P_2) / 2` for either
//! `u`, and the same holds for total variation, so each node contributes
//! half the distance between the two simulated samples.

use rayon::prelude::*;

use super::glm::report_from_draws;
use super::{BoundFamily, BoundReport};
use crate::divergences::{tv_empirical, w1_empirical};
use crate::error::{Error, Result};
use crate::hierarchy::{sample_supersample_with, Sampler, SelectorRule};
use crate::risk::{Algorithm, HierarchicalModel, Metric, MonteCarlo};
use crate::stats::stable_sum;
use crate::stream::{Purpose, Streams};

fn check(algorithm: &Algorithm, model: &HierarchicalModel, lipschitz: f64, mc: &MonteCarlo) -> Result<()> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Argument(format!("Lipschitz constant must be > 0, got {lipschitz}")));
    }
    if mc.outer_trials < 2 {
        return Err(Error::Argument("at least two supersample draws are required".into()));
    }
    if mc.inner_samples == 0 {
        return Err(Error::Argument("at least one inner sample is required".into()));
    }
    algorithm.validate(&model.topology)
}

fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Absolute => w1_empirical(a, b),
        Metric::Discrete => tv_empirical(a, b),
    }
    .expect("nonempty finite samples")
}

#[derive(Clone, Copy)]
enum Conditioning {
    /// Only the node's pair is fixed; its subtree is redrawn.
    Pair,
    /// The realized subtrees under both copies are fixed.
    Subtree,
}

struct Estimator<'a> {
    sampler: Sampler<'a>,
    algorithm: &'a Algorithm,
    streams: Streams,
    lipschitz: f64,
    metric: Metric,
    inner: usize,
    conditioning: Conditioning,
}

impl Estimator<'_> {
    /// Layer contributions `2 Lip / N_l * sum_i term_i` for one draw.
    fn draw(&self, d: u64) -> Vec<f64> {
        let t = self.sampler.topology;
        let depth = t.depth();
        let ss = sample_supersample_with(&self.sampler, &self.streams, d, SelectorRule::Uniform);
        let selected = ss.select();
        let base = selected.leaves();
        let mut leaves = base.to_vec();
        let mut scratch = Vec::new();
        let mut samples = [Vec::with_capacity(self.inner), Vec::with_capacity(self.inner)];
        (1..=depth)
            .map(|l| {
                let terms: Vec<f64> = (0..t.size(l))
                    .map(|off| {
                        let range = t.descendant_range(l, off, depth);
                        let pair = ss.pairs_at(l)[off];
                        let chosen = ss.selectors_at(l)[off].index();
                        // Realized subtree leaves under each copy.
                        let fixed: Option<[Vec<f64>; 2]> = match self.conditioning {
                            Conditioning::Pair => None,
                            Conditioning::Subtree => {
                                let mut ghost = vec![0.0; range.len()];
                                let mut rng = self.streams.rng(d, l, off, Purpose::Ghost);
                                self.sampler.fill_below(l, off, pair[1 - chosen], &mut rng, &mut scratch, &mut ghost);
                                let own = base[range.clone()].to_vec();
                                Some(if chosen == 0 { [own, ghost] } else { [ghost, own] })
                            }
                        };
                        let inner = self.streams.rng(d, l, off, Purpose::Inner);
                        let alg = self.streams.rng(d, l, off, Purpose::Algorithm);
                        for u in 0..2 {
                            let mut inner = inner.clone();
                            let mut alg = alg.clone();
                            samples[u].clear();
                            if let Some(f) = &fixed {
                                leaves[range.clone()].copy_from_slice(&f[u]);
                            }
                            for _ in 0..self.inner {
                                if fixed.is_none() {
                                    self.sampler.fill_below(
                                        l,
                                        off,
                                        pair[u],
                                        &mut inner,
                                        &mut scratch,
                                        &mut leaves[range.clone()],
                                    );
                                }
                                let w = self.algorithm.fit(t, &leaves, &mut alg);
                                samples[u].push(w);
                            }
                        }
                        leaves[range.clone()].copy_from_slice(&base[range]);
                        0.5 * distance(self.metric, &samples[0], &samples[1])
                    })
                    .collect();
                2.0 * self.lipschitz * stable_sum(terms) / t.size(l) as f64
            })
            .collect()
    }
}

fn run(
    model: &HierarchicalModel,
    algorithm: &Algorithm,
    lipschitz: f64,
    metric: Metric,
    mc: &MonteCarlo,
    conditioning: Conditioning,
    family: BoundFamily,
) -> Result<BoundReport> {
    check(algorithm, model, lipschitz, mc)?;
    let est = Estimator {
        sampler: model.sampler(),
        algorithm,
        streams: Streams::new(mc.seed),
        lipschitz,
        metric,
        inner: mc.inner_samples,
        conditioning,
    };
    let per_draw: Vec<Vec<f64>> = (0..mc.outer_trials as u64)
        .into_par_iter()
        .map(|d| est.draw(d))
        .collect();
    Ok(report_from_draws(family, Some(metric), &per_draw).with_lipschitz(lipschitz))
}

/// `2 Lip sum_l (1/N_l) sum_i E W(P_{W | pair, U}, P_{W | pair})`, with
/// `mc.outer_trials` supersample draws and `mc.inner_samples` hypotheses
/// per branch.
pub fn wasserstein_bound_mc(
    model: &HierarchicalModel,
    algorithm: &Algorithm,
    lipschitz: f64,
    metric: Metric,
    mc: &MonteCarlo,
) -> Result<BoundReport> {
    run(model, algorithm, lipschitz, metric, mc, Conditioning::Pair, BoundFamily::Wasserstein)
}

/// Same structure, but the hypothesis laws are conditioned on the realized
/// leaves under the selected copy and under its ghost; only the algorithm's
/// own randomness remains.
pub fn subtree_bound_mc(
    model: &HierarchicalModel,
    algorithm: &Algorithm,
    lipschitz: f64,
    metric: Metric,
    mc: &MonteCarlo,
) -> Result<BoundReport> {
    run(model, algorithm, lipschitz, metric, mc, Conditioning::Subtree, BoundFamily::Subtree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{glm_wasserstein_bound, GlmParams};
    use crate::topology::Topology;

    fn glm(branching: &[usize], sigmas: &[f64]) -> GlmParams {
        GlmParams::new(0.0, sigmas.to_vec(), Topology::new(branching.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn zero_variance_gives_zero() {
        let p = glm(&[2, 2], &[0.0, 0.0]);
        let mc = MonteCarlo::new(20, 1).with_inner(2);
        for f in [wasserstein_bound_mc, subtree_bound_mc] {
            let r = f(&p.model(), &Algorithm::LeafAverage, 1.0, Metric::Absolute, &mc).unwrap();
            assert_eq!((r.total, r.total_std_error), (0.0, 0.0));
        }
    }

    #[test]
    fn matches_closed_form_per_layer() {
        let p = glm(&[2, 2], &[1.0, 1.0]);
        let mc = MonteCarlo::new(20_000, 11).with_inner(2);
        let r = wasserstein_bound_mc(&p.model(), &Algorithm::LeafAverage, 1.0, Metric::Absolute, &mc).unwrap();
        let exact = glm_wasserstein_bound(&p);
        for (got, want) in r.per_layer.iter().zip(&exact.per_layer) {
            assert!((got.contribution - want.contribution).abs() < 4.0 * got.std_error);
        }
        assert_eq!(r.lipschitz_used, Some(1.0));
        assert_eq!(r.metric, Some(Metric::Absolute));
    }

    #[test]
    fn single_layer_subtree_matches_pair_conditioning() {
        let p = glm(&[4], &[1.0]);
        let mc = MonteCarlo::new(5_000, 2).with_inner(1);
        let a = wasserstein_bound_mc(&p.model(), &Algorithm::LeafAverage, 1.0, Metric::Absolute, &mc).unwrap();
        let b = subtree_bound_mc(&p.model(), &Algorithm::LeafAverage, 1.0, Metric::Absolute, &mc).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_scales_linearly() {
        let p = glm(&[3], &[0.5]);
        let mc = MonteCarlo::new(100, 4).with_inner(2);
        let a = wasserstein_bound_mc(&p.model(), &Algorithm::LeafAverage, 1.0, Metric::Absolute, &mc).unwrap();
        let b = wasserstein_bound_mc(&p.model(), &Algorithm::LeafAverage, 3.0, Metric::Absolute, &mc).unwrap();
        assert!((3.0 * a.total - b.total).abs() < 1e-12);
        assert!(wasserstein_bound_mc(&p.model(), &Algorithm::LeafAverage, 0.0, Metric::Absolute, &mc).is_err());
    }

    #[test]
    fn reproducible() {
        let p = glm(&[2, 3], &[1.0, 0.3]);
        let mc = MonteCarlo::new(50, 9).with_inner(3);
        let alg = Algorithm::NoisyLeafAverage { noise_sd: 0.2 };
        let a = subtree_bound_mc(&p.model(), &alg, 1.0, Metric::Absolute, &mc).unwrap();
        let b = subtree_bound_mc(&p.model(), &alg, 1.0, Metric::Absolute, &mc).unwrap();
        assert_eq!(a, b);
    }
}
