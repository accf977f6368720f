//! Single-round hierarchical aggregation under per-layer differential
//! privacy.
//!
//! Leaves are the layer-`L` hypotheses. Walking bottom-up, every node at
//! layer `l - 1` averages its `n_l` children's hypotheses and passes the
//! average through the layer's mechanism, so a node's output depends on the
//! data only through its children's outputs.
//!
//! Neighbouring inputs differ by replacing one child hypothesis. For values
//! in `[lo, hi]` the mean of `n` children then has sensitivity
//! `(hi - lo) / n`. Noised hypotheses are clipped back to `[lo, hi]`; that is
//! post-processing and keeps the guarantee.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{dp_bound, BoundReport};
use crate::error::{Error, Result};
use crate::hierarchy::KernelKind;
use crate::risk::{gen_error_mc, Algorithm, HierarchicalModel, Loss, MonteCarlo};
use crate::stats::GenEstimate;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case", deny_unknown_fields)]
pub enum DpMechanism {
    LaplaceOnMean { epsilon: f64, range: (f64, f64) },
    /// Rounds the children's mean to the nearest symbol of `0..alphabet`
    /// and reports it through K-ary randomized response.
    RandomizedResponse { epsilon: f64, alphabet: usize },
}

impl DpMechanism {
    pub fn epsilon(&self) -> f64 {
        match self {
            DpMechanism::LaplaceOnMean { epsilon, .. }
            | DpMechanism::RandomizedResponse { epsilon, .. } => *epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon();
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Contract(format!(
                "mechanism epsilon must be > 0, got {eps}"
            )));
        }
        match self {
            DpMechanism::LaplaceOnMean { range: (lo, hi), .. } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Contract(format!("invalid value range [{lo}, {hi}]")));
                }
            }
            DpMechanism::RandomizedResponse { alphabet, .. } => {
                if *alphabet < 2 {
                    return Err(Error::Contract("randomized response needs >= 2 symbols".into()));
                }
            }
        }
        Ok(())
    }

    /// Applies the mechanism to the children's `mean` using the uniform
    /// variate `u` in `[0, 1)`. The output is a pure function of
    /// `(mean, n_children, u)`, which makes rounds replayable.
    pub fn apply(&self, mean: f64, n_children: usize, u: f64) -> f64 {
        match *self {
            DpMechanism::LaplaceOnMean {
                epsilon,
                range: (lo, hi),
            } => {
                let scale = (hi - lo) / (n_children as f64 * epsilon);
                (mean + laplace_from_uniform(scale, u)).clamp(lo, hi)
            }
            DpMechanism::RandomizedResponse { epsilon, alphabet } => {
                let symbol = mean.round().clamp(0.0, (alphabet - 1) as f64) as usize;
                randomized_response_from_uniform(symbol, alphabet, epsilon, u) as f64
            }
        }
    }
}

/// Inverse-CDF Laplace draw with location 0 and the given scale.
fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let centered = u - 0.5;
    let tail = (1.0 - 2.0 * centered.abs()).max(f64::MIN_POSITIVE);
    -scale * centered.signum() * tail.ln()
}

/// Probability that randomized response reports its input unchanged.
pub fn rr_stay_probability(epsilon: f64, alphabet: usize) -> f64 {
    if epsilon.is_infinite() {
        return 1.0;
    }
    let e = epsilon.exp();
    e / (e + alphabet as f64 - 1.0)
}

fn randomized_response_from_uniform(symbol: usize, alphabet: usize, epsilon: f64, u: f64) -> usize {
    let stay = rr_stay_probability(epsilon, alphabet);
    if u < stay {
        return symbol;
    }
    let others = alphabet - 1;
    let k = (((u - stay) / (1.0 - stay)) * others as f64) as usize;
    let k = k.min(others - 1);
    if k >= symbol {
        k + 1
    } else {
        k
    }
}

/// Output distribution of randomized response on `symbol`.
pub fn randomized_response_row(symbol: usize, alphabet: usize, epsilon: f64) -> Vec<f64> {
    let stay = rr_stay_probability(epsilon, alphabet);
    let other = (1.0 - stay) / (alphabet as f64 - 1.0);
    (0..alphabet)
        .map(|j| if j == symbol { stay } else { other })
        .collect()
}

/// `value + Laplace(0, sensitivity / epsilon)`.
pub fn laplace_mechanism<R: Rng + ?Sized>(
    value: f64,
    sensitivity: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Argument(format!("sensitivity must be > 0, got {sensitivity}")));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let scale = sensitivity / epsilon;
    Ok(value + laplace_from_uniform(scale, rng.random::<f64>()))
}

/// Laplace(location, scale) CDF.
pub fn laplace_cdf(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Per-layer mechanisms; entry `l - 1` aggregates layer `l` into `l - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationPlan {
    mechanisms: Vec<DpMechanism>,
}

impl AggregationPlan {
    pub fn new(mechanisms: Vec<DpMechanism>) -> Result<Self> {
        for m in &mechanisms {
            m.validate()?;
        }
        Ok(AggregationPlan { mechanisms })
    }

    /// Laplace mechanisms on `[lo, hi]` with the given per-layer epsilons.
    pub fn laplace(epsilons: &[f64], range: (f64, f64)) -> Result<Self> {
        AggregationPlan::new(
            epsilons
                .iter()
                .map(|&epsilon| DpMechanism::LaplaceOnMean { epsilon, range })
                .collect(),
        )
    }

    pub fn mechanisms(&self) -> &[DpMechanism] {
        &self.mechanisms
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.mechanisms.iter().map(DpMechanism::epsilon).collect()
    }

    pub fn validate_for(&self, topology: &Topology) -> Result<()> {
        if self.mechanisms.len() != topology.depth() {
            return Err(Error::Config(format!(
                "plan has {} mechanisms for a depth-{} topology",
                self.mechanisms.len(),
                topology.depth()
            )));
        }
        Ok(())
    }
}

/// Every node's hypothesis after one round, with the uniform variate each
/// mechanism consumed. Index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub hypotheses: Vec<Vec<f64>>,
    pub draws: Vec<Vec<f64>>,
}

impl RoundOutcome {
    pub fn root(&self) -> f64 {
        self.hypotheses[0][0]
    }

    /// Recomputes node (`layer`, `offset`) from its stored children and
    /// recorded draw.
    pub fn replay(&self, topology: &Topology, plan: &AggregationPlan, layer: usize, offset: usize) -> f64 {
        let n = topology.branching()[layer];
        let children = &self.hypotheses[layer + 1][offset * n..(offset + 1) * n];
        plan.mechanisms[layer].apply(mean_of(children), n, self.draws[layer][offset])
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs one bottom-up aggregation pass over `leaves`. Draws are consumed
/// from `rng` layer by layer, bottom-up, in lexicographic node order.
pub fn aggregate_round<R: Rng + ?Sized>(
    topology: &Topology,
    leaves: &[f64],
    plan: &AggregationPlan,
    rng: &mut R,
) -> Result<RoundOutcome> {
    plan.validate_for(topology)?;
    if leaves.len() != topology.leaf_count() {
        return Err(Error::Config(format!(
            "{} leaves for a topology with {}",
            leaves.len(),
            topology.leaf_count()
        )));
    }
    let depth = topology.depth();
    let mut hypotheses = vec![Vec::new(); depth + 1];
    let mut draws = vec![Vec::new(); depth];
    hypotheses[depth] = leaves.to_vec();
    for layer in (0..depth).rev() {
        let n = topology.branching()[layer];
        let mech = &plan.mechanisms[layer];
        let (upper, lower) = hypotheses.split_at_mut(layer + 1);
        let children = &lower[0];
        let mut out = Vec::with_capacity(children.len() / n);
        let mut used = Vec::with_capacity(children.len() / n);
        for group in children.chunks_exact(n) {
            let u = rng.random::<f64>();
            out.push(mech.apply(mean_of(group), n, u));
            used.push(u);
        }
        upper[layer] = out;
        draws[layer] = used;
    }
    Ok(RoundOutcome { hypotheses, draws })
}

/// Largest ratio, in either direction, between the probabilities that the
/// Laplace mechanism at scale `sensitivity / epsilon` puts on bins of
/// `width` for two inputs `sensitivity` apart. The grid covers both
/// locations with 40 scales of margin. Bin masses are evaluated in tail form
/// so that far bins keep full relative precision.
pub fn laplace_likelihood_ratio(epsilon: f64, sensitivity: f64, width: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite() && sensitivity > 0.0 && width > 0.0) {
        return Err(Error::Argument("epsilon, sensitivity and width must be positive".into()));
    }
    let scale = sensitivity / epsilon;
    let lo = -40.0 * scale;
    let bins = ((sensitivity + 80.0 * scale) / width).ceil() as usize;
    let mass = |a: f64, b: f64, loc: f64| -> f64 {
        let (za, zb) = ((a - loc) / scale, (b - loc) / scale);
        if za >= 0.0 {
            0.5 * ((-za).exp() - (-zb).exp())
        } else if zb <= 0.0 {
            0.5 * (zb.exp() - za.exp())
        } else {
            1.0 - 0.5 * (-zb).exp() - 0.5 * za.exp()
        }
    };
    let mut worst = 1.0f64;
    for k in 0..bins {
        let a = lo + k as f64 * width;
        let b = a + width;
        let (p, q) = (mass(a, b, 0.0), mass(a, b, sensitivity));
        if p > 0.0 && q > 0.0 {
            worst = worst.max(p / q).max(q / p);
        }
    }
    Ok(worst)
}

/// Outcome of [`dp_empirical_vs_bound`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpComparison {
    pub gen: GenEstimate,
    pub bound: BoundReport,
    /// `|gen| <= bound + 3 SE`.
    pub dominates: bool,
}

/// Measures the generalization error of the private aggregation round and
/// compares it with the privacy bound of the plan's epsilons.
pub fn dp_empirical_vs_bound(
    model: &HierarchicalModel,
    plan: &AggregationPlan,
    loss: &Loss,
    mc: &MonteCarlo,
) -> Result<DpComparison> {
    match loss.range() {
        Some((lo, hi)) if lo >= 0.0 && hi <= 1.0 => {}
        _ => {
            return Err(Error::Contract(format!(
                "the privacy bound needs a loss bounded in [0, 1], got {loss:?}"
            )))
        }
    }
    let bounded = match model.kernel.kind() {
        KernelKind::BoundedBernoulli { .. } => true,
        KernelKind::DiscreteFinite { .. } => model.kernel.alphabet() == Some(2),
        KernelKind::GaussianLocation { .. } => false,
    };
    if !bounded || model.kernel.pinned().values().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("the privacy bound needs leaf values in [0, 1]".into()));
    }
    for m in plan.mechanisms() {
        m.validate()?;
    }
    let algorithm = Algorithm::HierarchicalDp(plan.clone());
    let gen = gen_error_mc(model, &algorithm, loss, mc)?;
    let bound = dp_bound(&plan.epsilons())?;
    let dominates = gen.mean.abs() <= bound.total + 3.0 * gen.std_error;
    Ok(DpComparison {
        gen,
        bound,
        dominates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huge_epsilon_is_nearly_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v = laplace_mechanism(0.3, 1.0, 1e9, &mut rng).unwrap();
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(laplace_mechanism(0.0, 0.0, 1.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, -1.0, 1.0, &mut rng).is_err());
        assert!(matches!(
            AggregationPlan::laplace(&[0.0], (0.0, 1.0)),
            Err(Error::Contract(_))
        ));
        assert!(AggregationPlan::laplace(&[1.0], (1.0, 1.0)).is_err());
    }

    #[test]
    fn laplace_is_deterministic_under_seed() {
        let a = laplace_mechanism(0.0, 1.0, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = laplace_mechanism(0.0, 1.0, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_round_is_global_mean() {
        let t = Topology::new(vec![3, 2, 4]).unwrap();
        let leaves: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let plan = AggregationPlan::laplace(&[f64::INFINITY; 3], (0.0, 1.0)).unwrap();
        let out = aggregate_round(&t, &leaves, &plan, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mean = leaves.iter().sum::<f64>() / 24.0;
        assert!((out.root() - mean).abs() < 1e-12);
    }

    #[test]
    fn replay_is_bit_exact() {
        let t = Topology::new(vec![2, 3]).unwrap();
        let leaves = [0.1, 0.9, 0.4, 0.5, 0.5, 1.0];
        let plan = AggregationPlan::laplace(&[0.7, 0.3], (0.0, 1.0)).unwrap();
        let out = aggregate_round(&t, &leaves, &plan, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for layer in 0..2 {
            for off in 0..out.hypotheses[layer].len() {
                assert_eq!(
                    out.replay(&t, &plan, layer, off).to_bits(),
                    out.hypotheses[layer][off].to_bits()
                );
            }
        }
        assert!(out.hypotheses.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn depth_mismatch_is_config_error() {
        let t = Topology::new(vec![2, 2]).unwrap();
        let plan = AggregationPlan::laplace(&[1.0], (0.0, 1.0)).unwrap();
        let err = aggregate_round(&t, &[0.0; 4], &plan, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn randomized_response_matches_its_table() {
        let (k, eps) = (4usize, 0.8);
        let n = 200_000;
        let mut counts = vec![0usize; k];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..n {
            let u: f64 = rng.random();
            counts[randomized_response_from_uniform(2, k, eps, u)] += 1;
        }
        let row = randomized_response_row(2, k, eps);
        for (c, p) in counts.iter().zip(&row) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 5.0 * se);
        }
    }
    #[test]
    fn likelihood_ratio_is_bounded() {
        for eps in [0.1, 0.5, 1.0] {
            let r = laplace_likelihood_ratio(eps, 1.0, 1e-3).unwrap();
            assert!(r <= eps.exp() * (1.0 + 1e-6), "{eps}: {r}");
            assert!(r >= eps.exp() * (1.0 - 1e-3));
        }
    }

    #[test]
    fn laplace_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (sens, eps) = (0.5, 0.25);
        let b = sens / eps;
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| laplace_mechanism(0.0, sens, eps, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.01);
    }

    #[test]
    fn private_round_is_unbiased_on_constant_leaves() {
        // Leaves all equal 0.5; noise is symmetric and the clip range is
        // centered on it, so E[W] = 0.5.
        let t = Topology::new(vec![2, 2]).unwrap();
        let plan = AggregationPlan::laplace(&[0.5, 0.5], (0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let roots: Vec<f64> = (0..100_000)
            .map(|_| aggregate_round(&t, &[0.5; 4], &plan, &mut rng).unwrap().root())
            .collect();
        assert!(GenEstimate::from_samples(&roots).within_se_of(0.5, 3.0));
    }

    #[test]
    fn comparison_contracts() {
        use crate::hierarchy::Kernel;
        let t = Topology::new(vec![2, 2]).unwrap();
        let bern = HierarchicalModel::new(t.clone(), Kernel::bernoulli(2.0).unwrap(), 1.0).unwrap();
        let plan = AggregationPlan::laplace(&[1e9, 1e9], (0.0, 1.0)).unwrap();
        let loss = Loss::ZeroOne { threshold: 0.5 };
        let mc = MonteCarlo::new(200, 1).with_inner(4);
        let c = dp_empirical_vs_bound(&bern, &plan, &loss, &mc).unwrap();
        assert_eq!(c.gen.mean, 0.0);
        assert!(c.dominates);
        assert!(matches!(
            dp_empirical_vs_bound(&bern, &plan, &Loss::Absolute, &mc),
            Err(Error::Contract(_))
        ));
        let glm = HierarchicalModel::new(t, Kernel::gaussian(vec![1.0, 1.0]).unwrap(), 0.0).unwrap();
        assert!(matches!(
            dp_empirical_vs_bound(&glm, &plan, &loss, &mc),
            Err(Error::Contract(_))
        ));
        assert!(matches!(AggregationPlan::laplace(&[0.0, 0.1], (0.0, 1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn bounded_bernoulli_sweep_is_dominated() {
        use crate::hierarchy::Kernel;
        let t = Topology::new(vec![4, 4]).unwrap();
        let m = HierarchicalModel::new(t, Kernel::bernoulli(2.0).unwrap(), 0.5).unwrap();
        for eps in [0.1, 0.5, 1.0, 2.0] {
            let plan = AggregationPlan::laplace(&[eps, eps], (0.0, 1.0)).unwrap();
            let c = dp_empirical_vs_bound(&m, &plan, &Loss::ZeroOne { threshold: 0.5 }, &MonteCarlo::new(2_000, 3).with_inner(16)).unwrap();
            assert!(c.dominates, "{eps}: {c:?}");
        }
    }
}
