//! Losses, learning algorithms and Monte Carlo estimates of the
//! generalization error together with its per-layer decomposition.
//!
//! Layer indexing of the decomposition: the term of layer `l` compares a
//! node at layer `l` (`l = 0` is the root) with its children at layer
//! `l + 1`. The Wasserstein bounds index the same terms by the child layer,
//! which is [`DecompositionTerm::child_layer`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp_round::{aggregate_round, AggregationPlan};
use crate::error::{Error, Result};
use crate::hierarchy::{sample_tree_with, DatasetTree, Kernel, Sampler};
use crate::stats::{stable_mean, stable_sum, GenEstimate};
use crate::stream::{Purpose, Streams};
use crate::topology::{NodePath, Topology};

/// Metric on the hypothesis space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `rho(w, w') = |w - w'|`.
    Absolute,
    /// `rho(w, w') = 1[w != w']`.
    Discrete,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Absolute => "absolute",
            Metric::Discrete => "discrete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Loss {
    /// `|w - z|`.
    Absolute,
    /// `min((w - z)^2, bound)`.
    SquaredClipped { bound: f64 },
    /// `1[|w - z| > threshold]`.
    ZeroOne { threshold: f64 },
}

/// Declared Lipschitz behaviour of a loss in its first argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzContract {
    pub constant: f64,
    pub metric: Metric,
}

impl Loss {
    pub fn eval(&self, w: f64, z: f64) -> f64 {
        match *self {
            Loss::Absolute => (w - z).abs(),
            Loss::SquaredClipped { bound } => ((w - z) * (w - z)).min(bound),
            Loss::ZeroOne { threshold } => f64::from((w - z).abs() > threshold),
        }
    }

    /// The zero-one loss is only Lipschitz under the discrete metric.
    pub fn lipschitz(&self) -> LipschitzContract {
        match *self {
            Loss::Absolute => LipschitzContract {
                constant: 1.0,
                metric: Metric::Absolute,
            },
            Loss::SquaredClipped { bound } => LipschitzContract {
                constant: 2.0 * bound.sqrt(),
                metric: Metric::Absolute,
            },
            Loss::ZeroOne { .. } => LipschitzContract {
                constant: 1.0,
                metric: Metric::Discrete,
            },
        }
    }

    /// `None` when the loss is unbounded.
    pub fn range(&self) -> Option<(f64, f64)> {
        match *self {
            Loss::Absolute => None,
            Loss::SquaredClipped { bound } => Some((0.0, bound)),
            Loss::ZeroOne { .. } => Some((0.0, 1.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Absolute => Ok(()),
            Loss::SquaredClipped { bound } if bound > 0.0 && bound.is_finite() => Ok(()),
            Loss::ZeroOne { threshold } if threshold >= 0.0 && threshold.is_finite() => Ok(()),
            _ => Err(Error::Config(format!("invalid loss parameters {self:?}"))),
        }
    }
}

/// A learning rule mapping the dataset tree to a scalar hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    LeafAverage,
    NoisyLeafAverage { noise_sd: f64 },
    HierarchicalDp(AggregationPlan),
}

impl Algorithm {
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        match self {
            Algorithm::LeafAverage => Ok(()),
            Algorithm::NoisyLeafAverage { noise_sd } => {
                if noise_sd.is_finite() && *noise_sd >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("noise_sd must be finite and >= 0".into()))
                }
            }
            Algorithm::HierarchicalDp(plan) => plan.validate_for(topology),
        }
    }

    /// Whether the hypothesis is a deterministic function of the leaves.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Algorithm::LeafAverage => true,
            Algorithm::NoisyLeafAverage { noise_sd } => *noise_sd == 0.0,
            Algorithm::HierarchicalDp(_) => false,
        }
    }

    /// Trains on `leaves`; randomness comes from `rng` only.
    pub fn fit<R: Rng + ?Sized>(&self, topology: &Topology, leaves: &[f64], rng: &mut R) -> f64 {
        match self {
            Algorithm::LeafAverage => stable_mean(leaves),
            Algorithm::NoisyLeafAverage { noise_sd } => {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                stable_mean(leaves) + noise_sd * z
            }
            Algorithm::HierarchicalDp(plan) => aggregate_round(topology, leaves, plan, rng)
                .expect("plan validated against topology")
                .root(),
        }
    }
}

/// The sampling model: topology, kernel and root parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub topology: Topology,
    pub kernel: Kernel,
    pub root_param: f64,
}

impl HierarchicalModel {
    pub fn new(topology: Topology, kernel: Kernel, root_param: f64) -> Result<Self> {
        kernel.validate(&topology, root_param)?;
        Ok(HierarchicalModel {
            topology,
            kernel,
            root_param,
        })
    }

    pub(crate) fn sampler(&self) -> Sampler<'_> {
        Sampler::new(&self.topology, &self.kernel, self.root_param)
            .expect("model validated at construction")
    }
}

/// Trial counts and seed of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub outer_trials: usize,
    pub inner_samples: usize,
    pub seed: u64,
}

impl MonteCarlo {
    pub const DEFAULT_INNER: usize = 64;

    pub fn new(outer_trials: usize, seed: u64) -> Self {
        MonteCarlo {
            outer_trials,
            inner_samples: Self::DEFAULT_INNER,
            seed,
        }
    }

    pub fn with_inner(mut self, inner_samples: usize) -> Self {
        self.inner_samples = inner_samples;
        self
    }
}

/// `(1 / N_L) * sum over leaves of loss(w, leaf)`.
pub fn empirical_risk(w: f64, tree: &DatasetTree, loss: &Loss) -> f64 {
    stable_mean(&tree.leaves().iter().map(|&z| loss.eval(w, z)).collect::<Vec<_>>())
}

/// Mean loss of `w` on fresh root-to-leaf chains; one chain per trial.
pub fn population_risk_mc(
    w: f64,
    model: &HierarchicalModel,
    loss: &Loss,
    trials: usize,
    seed: u64,
) -> Result<GenEstimate> {
    if trials == 0 {
        return Err(Error::Argument("population risk needs at least one trial".into()));
    }
    let sampler = model.sampler();
    let streams = Streams::new(seed);
    let values: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = streams.rng(t, 0, 0, Purpose::Test);
            loss.eval(w, sampler.draw_chain(0, 0, model.root_param, &mut rng))
        })
        .collect();
    Ok(GenEstimate::from_samples(&values))
}

fn check_mc(mc: &MonteCarlo) -> Result<()> {
    if mc.outer_trials < 2 {
        return Err(Error::Argument("at least two outer trials are required".into()));
    }
    if mc.inner_samples == 0 {
        return Err(Error::Argument("at least one inner test sample is required".into()));
    }
    Ok(())
}

/// Draws the tree of `trial` and trains on it.
fn train(
    sampler: &Sampler<'_>,
    algorithm: &Algorithm,
    streams: &Streams,
    trial: u64,
) -> (DatasetTree, f64) {
    let tree = sample_tree_with(sampler, streams, trial, Purpose::Payload);
    let mut rng = streams.rng(trial, 0, 0, Purpose::Algorithm);
    let w = algorithm.fit(sampler.topology, tree.leaves(), &mut rng);
    (tree, w)
}

/// Mean loss on `count` fresh leaves drawn below node (`layer`, `offset`).
fn test_risk(
    sampler: &Sampler<'_>,
    streams: &Streams,
    trial: u64,
    layer: usize,
    offset: usize,
    value: f64,
    w: f64,
    loss: &Loss,
    count: usize,
) -> f64 {
    let mut rng = streams.rng(trial, layer, offset, Purpose::Test);
    stable_sum((0..count).map(|_| loss.eval(w, sampler.draw_chain(layer, offset, value, &mut rng))))
        / count as f64
}

/// Population minus empirical risk, averaged over outer trials.
pub fn gen_error_mc(
    model: &HierarchicalModel,
    algorithm: &Algorithm,
    loss: &Loss,
    mc: &MonteCarlo,
) -> Result<GenEstimate> {
    check_mc(mc)?;
    algorithm.validate(&model.topology)?;
    loss.validate()?;
    let sampler = model.sampler();
    let streams = Streams::new(mc.seed);
    let values: Vec<f64> = (0..mc.outer_trials as u64)
        .into_par_iter()
        .map(|t| {
            let (tree, w) = train(&sampler, algorithm, &streams, t);
            let pop = test_risk(
                &sampler,
                &streams,
                t,
                0,
                0,
                model.root_param,
                w,
                loss,
                mc.inner_samples,
            );
            pop - empirical_risk(w, &tree, loss)
        })
        .collect();
    Ok(GenEstimate::from_samples(&values))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionTerm {
    /// Layer of the parent node; 0 is the root.
    pub layer: usize,
    pub path: NodePath,
    pub estimate: GenEstimate,
}

impl DecompositionTerm {
    /// The same term indexed by the layer of the children.
    pub fn child_layer(&self) -> usize {
        self.layer + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub terms: Vec<DecompositionTerm>,
    /// `sum_l (1 / N_l) sum_i Delta_{l,i}`, per trial then averaged.
    pub signed_total: GenEstimate,
    /// `sum_l (1 / N_l) sum_i |mean Delta_{l,i}|`.
    pub absolute_total: f64,
    /// Generalization error on the same streams as the terms.
    pub gen: GenEstimate,
}

impl Decomposition {
    /// `(1 / N_l) sum_i mean Delta_{l,i}` for every parent layer.
    pub fn layer_sums(&self, topology: &Topology) -> Vec<f64> {
        (0..topology.depth())
            .map(|l| {
                stable_sum(
                    self.terms
                        .iter()
                        .filter(|t| t.layer == l)
                        .map(|t| t.estimate.mean),
                ) / topology.size(l) as f64
            })
            .collect()
    }

    /// Combined standard error of the per-node terms, in quadrature.
    pub fn combined_std_error(&self, topology: &Topology) -> f64 {
        stable_sum(self.terms.iter().map(|t| {
            let w = t.estimate.std_error / topology.size(t.layer) as f64;
            w * w
        }))
        .sqrt()
    }
}

/// Estimates every parent-versus-children term of the telescoping
/// decomposition. All terms of one outer trial share the trained hypothesis
/// and the root test stream of [`gen_error_mc`], so the signed total agrees
/// with it trial by trial.
pub fn decomposition_terms_mc(
    model: &HierarchicalModel,
    algorithm: &Algorithm,
    loss: &Loss,
    mc: &MonteCarlo,
) -> Result<Decomposition> {
    check_mc(mc)?;
    algorithm.validate(&model.topology)?;
    loss.validate()?;
    let topology = &model.topology;
    let depth = topology.depth();
    let sampler = model.sampler();
    let streams = Streams::new(mc.seed);

    // Per trial: every Delta in (layer, offset) order, the signed total and
    // the generalization error.
    let per_trial: Vec<(Vec<f64>, f64, f64)> = (0..mc.outer_trials as u64)
        .into_par_iter()
        .map(|t| {
            let (tree, w) = train(&sampler, algorithm, &streams, t);
            let mut risks: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
            risks.push(vec![test_risk(
                &sampler,
                &streams,
                t,
                0,
                0,
                model.root_param,
                w,
                loss,
                mc.inner_samples,
            )]);
            for l in 1..depth {
                risks.push(
                    tree.layer(l)
                        .iter()
                        .enumerate()
                        .map(|(off, &v)| {
                            test_risk(&sampler, &streams, t, l, off, v, w, loss, mc.inner_samples)
                        })
                        .collect(),
                );
            }
            risks.push(tree.leaves().iter().map(|&z| loss.eval(w, z)).collect());

            let mut deltas = Vec::new();
            let mut layer_totals = Vec::with_capacity(depth);
            for l in 0..depth {
                let n = topology.branching()[l];
                let start = deltas.len();
                for (off, &r) in risks[l].iter().enumerate() {
                    let children = &risks[l + 1][off * n..(off + 1) * n];
                    deltas.push(r - stable_sum(children.iter().copied()) / n as f64);
                }
                layer_totals
                    .push(stable_sum(deltas[start..].iter().copied()) / topology.size(l) as f64);
            }
            let gen = risks[0][0] - stable_mean(&risks[depth]);
            (deltas, stable_sum(layer_totals), gen)
        })
        .collect();

    let mut terms = Vec::new();
    let mut k = 0;
    for l in 0..depth {
        for off in 0..topology.size(l) {
            let column: Vec<f64> = per_trial.iter().map(|(d, _, _)| d[k]).collect();
            terms.push(DecompositionTerm {
                layer: l,
                path: topology.path_at(l, off),
                estimate: GenEstimate::from_samples(&column),
            });
            k += 1;
        }
    }
    let totals: Vec<f64> = per_trial.iter().map(|(_, s, _)| *s).collect();
    let gens: Vec<f64> = per_trial.iter().map(|(_, _, g)| *g).collect();
    let absolute_total = stable_sum(
        terms
            .iter()
            .map(|t| t.estimate.mean.abs() / topology.size(t.layer) as f64),
    );
    Ok(Decomposition {
        terms,
        signed_total: GenEstimate::from_samples(&totals),
        absolute_total,
        gen: GenEstimate::from_samples(&gens),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::sample_tree;
    use proptest::prelude::*;

    fn glm(branching: &[usize], sigmas: &[f64], theta: f64) -> HierarchicalModel {
        HierarchicalModel::new(
            Topology::new(branching.to_vec()).unwrap(),
            Kernel::gaussian(sigmas.to_vec()).unwrap(),
            theta,
        )
        .unwrap()
    }

    fn tree_with_leaves(leaves: &[f64]) -> DatasetTree {
        let t = Topology::new(vec![leaves.len()]).unwrap();
        DatasetTree::from_layers(t, vec![leaves.to_vec()]).unwrap()
    }

    #[test]
    fn empirical_risk_examples() {
        let l = Loss::Absolute;
        assert_eq!(empirical_risk(2.0, &tree_with_leaves(&[2.0, 2.0, 2.0]), &l), 0.0);
        assert_eq!(empirical_risk(1.0, &tree_with_leaves(&[0.0, 2.0]), &l), 1.0);
        assert_eq!(empirical_risk(0.0, &tree_with_leaves(&[0.0, 1.0, 2.0, 3.0]), &l), 1.5);
    }

    #[test]
    fn loss_metadata() {
        assert_eq!(Loss::Absolute.lipschitz().constant, 1.0);
        assert_eq!(Loss::Absolute.range(), None);
        assert_eq!(Loss::ZeroOne { threshold: 0.5 }.range(), Some((0.0, 1.0)));
        assert_eq!(Loss::ZeroOne { threshold: 0.5 }.lipschitz().metric, Metric::Discrete);
        assert_eq!(Loss::SquaredClipped { bound: 4.0 }.lipschitz().constant, 4.0);
        assert!(Loss::SquaredClipped { bound: 0.0 }.validate().is_err());
    }

    #[test]
    fn population_risk_zero_variance() {
        let m = glm(&[3], &[0.0], 2.0);
        let e = population_risk_mc(2.0, &m, &Loss::Absolute, 100, 1).unwrap();
        assert_eq!((e.mean, e.std_error), (0.0, 0.0));
        assert!(matches!(
            population_risk_mc(2.0, &m, &Loss::Absolute, 0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gen_error_zero_variance() {
        let m = glm(&[2, 2], &[0.0, 0.0], 1.0);
        let e = gen_error_mc(&m, &Algorithm::LeafAverage, &Loss::Absolute, &MonteCarlo::new(50, 3)).unwrap();
        assert_eq!((e.mean, e.std_error), (0.0, 0.0));
        assert!(gen_error_mc(&m, &Algorithm::LeafAverage, &Loss::Absolute, &MonteCarlo::new(1, 3)).is_err());
    }

    #[test]
    fn decomposition_zero_variance() {
        let m = glm(&[2, 3], &[0.0, 0.0], 1.0);
        let d = decomposition_terms_mc(&m, &Algorithm::LeafAverage, &Loss::Absolute, &MonteCarlo::new(20, 3))
            .unwrap();
        assert_eq!(d.terms.len(), 1 + 2);
        assert!(d.terms.iter().all(|t| t.estimate.mean == 0.0));
        assert_eq!(d.terms[1].child_layer(), 2);
    }

    #[test]
    fn single_layer_decomposition_is_the_definition() {
        let m = glm(&[4], &[1.0], 0.0);
        let mc = MonteCarlo::new(2_000, 17);
        let d = decomposition_terms_mc(&m, &Algorithm::LeafAverage, &Loss::Absolute, &mc).unwrap();
        let g = gen_error_mc(&m, &Algorithm::LeafAverage, &Loss::Absolute, &mc).unwrap();
        assert_eq!(d.terms.len(), 1);
        assert!((d.terms[0].estimate.mean - g.mean).abs() < 1e-12);
        assert!(d.terms[0].estimate.agrees_with(&g, 3.0));
    }

    #[test]
    fn runs_are_reproducible() {
        let m = glm(&[3, 2], &[1.0, 0.5], 0.0);
        let mc = MonteCarlo::new(200, 5).with_inner(8);
        let alg = Algorithm::NoisyLeafAverage { noise_sd: 0.3 };
        let a = gen_error_mc(&m, &alg, &Loss::Absolute, &mc).unwrap();
        let b = gen_error_mc(&m, &alg, &Loss::Absolute, &mc).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    }

    #[test]
    fn leaf_average_is_deterministic_given_tree() {
        let m = glm(&[3, 3], &[1.0, 1.0], 0.0);
        let tree = sample_tree(&m.topology, &m.kernel, 0.0, &Streams::new(1), 0).unwrap();
        let mut r1 = Streams::new(1).rng(0, 0, 0, Purpose::Algorithm);
        let mut r2 = Streams::new(2).rng(9, 0, 0, Purpose::Algorithm);
        assert_eq!(
            Algorithm::LeafAverage.fit(&m.topology, tree.leaves(), &mut r1),
            Algorithm::LeafAverage.fit(&m.topology, tree.leaves(), &mut r2)
        );
    }

    fn any_loss() -> impl Strategy<Value = Loss> {
        prop_oneof![
            Just(Loss::Absolute),
            (0.1f64..10.0).prop_map(|bound| Loss::SquaredClipped { bound }),
            (0.0f64..2.0).prop_map(|threshold| Loss::ZeroOne { threshold }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn loss_contracts_hold(loss in any_loss(), w in -5.0f64..5.0, w2 in -5.0f64..5.0, z in -5.0f64..5.0) {
            let c = loss.lipschitz();
            let rho = match c.metric {
                Metric::Absolute => (w - w2).abs(),
                Metric::Discrete => f64::from(w != w2),
            };
            prop_assert!((loss.eval(w, z) - loss.eval(w2, z)).abs() <= c.constant * rho + 1e-12);
            if let Some((lo, hi)) = loss.range() {
                prop_assert!((lo..=hi).contains(&loss.eval(w, z)));
            }
        }

        #[test]
        fn expected_loss_is_lipschitz(
            w in -5.0f64..5.0,
            w2 in -5.0f64..5.0,
            sample in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let mean = |w: f64| sample.iter().map(|&z| Loss::Absolute.eval(w, z)).sum::<f64>() / sample.len() as f64;
            prop_assert!((mean(w) - mean(w2)).abs() <= (w - w2).abs() + 1e-12);
        }
    }
}
