//! Randomized property suites over the divergence, information and bound
//! code. Each suite is deterministic given its seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::discrete::{exact_bounds, SubtreeToy};
use crate::bounds::{glm_taylor_gen, glm_true_gen, glm_wasserstein_bound, GlmParams};
use crate::divergences::transport::discrete_metric_transport;
use crate::divergences::{
    kantorovich_potential, kr_duality_check, mixture_wasserstein_check_gaussian, pinsker_check,
    w1_discrete_metric, DiscreteDist, DiscreteJoint, TestFunction,
};
use crate::dp_round::{laplace_likelihood_ratio, randomized_response_row};
use crate::error::{Error, Result};
use crate::hierarchy::Kernel;
use crate::risk::{decomposition_terms_mc, gen_error_mc, Algorithm, HierarchicalModel, Loss, MonteCarlo};
use crate::topology::Topology;

/// Tolerance of exact information identities.
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Pinsker,
    KrDuality,
    CouplingOracle,
    Telescoping,
    CmiOrderings,
    MixtureInequality,
    DpLikelihoodRatio,
    GlmDominance,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Pinsker,
        Suite::KrDuality,
        Suite::CouplingOracle,
        Suite::Telescoping,
        Suite::CmiOrderings,
        Suite::MixtureInequality,
        Suite::DpLikelihoodRatio,
        Suite::GlmDominance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Pinsker => "pinsker",
            Suite::KrDuality => "kr-duality",
            Suite::CouplingOracle => "coupling-oracle",
            Suite::Telescoping => "telescoping",
            Suite::CmiOrderings => "cmi-orderings",
            Suite::MixtureInequality => "mixture-inequality",
            Suite::DpLikelihoodRatio => "dp-likelihood-ratio",
            Suite::GlmDominance => "glm-dominance",
        }
    }

    pub fn run(self, seed: u64) -> Result<SuiteResult> {
        let mut r = SuiteResult::new(self);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self as u64).wrapping_mul(0x9e37_79b9));
        match self {
            Suite::Pinsker => pinsker(&mut r, &mut rng)?,
            Suite::KrDuality => kr(&mut r, &mut rng)?,
            Suite::CouplingOracle => coupling(&mut r, &mut rng)?,
            Suite::Telescoping => telescoping(&mut r, seed)?,
            Suite::CmiOrderings => orderings(&mut r, &mut rng)?,
            Suite::MixtureInequality => mixture(&mut r, &mut rng)?,
            Suite::DpLikelihoodRatio => dp_ratio(&mut r)?,
            Suite::GlmDominance => glm_dominance(&mut r, &mut rng)?,
        }
        Ok(r)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown suite {s:?}")))
    }
}

/// One named check inside a suite, e.g. "pinsker holds".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest violation margin seen (`<= 0` when every case held).
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub checks: Vec<CheckResult>,
}

impl SuiteResult {
    fn new(suite: Suite) -> Self {
        SuiteResult {
            suite,
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Records one case; `margin > 0` is a failure.
    fn record(&mut self, name: &str, margin: f64) {
        let idx = match self.checks.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.checks.push(CheckResult {
                    name: name.to_string(),
                    cases: 0,
                    failures: 0,
                    worst_margin: f64::NEG_INFINITY,
                });
                self.checks.len() - 1
            }
        };
        let c = &mut self.checks[idx];
        c.cases += 1;
        if margin > 0.0 || margin.is_nan() {
            c.failures += 1;
        }
        c.worst_margin = c.worst_margin.max(margin);
    }
}

/// Runs every suite in order.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Suite::ALL.into_iter().map(|s| s.run(seed)).collect()
}

fn simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    // Exponential spacings, with occasional exact zeros.
    let w: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random::<f64>() < 0.1 {
                0.0
            } else {
                -(1.0 - rng.random::<f64>()).ln()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        let mut v = vec![0.0; k];
        v[rng.random_range(0..k)] = 1.0;
        return v;
    }
    w.iter().map(|x| x / total).collect()
}

fn dist<R: Rng>(rng: &mut R, k: usize) -> DiscreteDist {
    DiscreteDist::from_weights(&simplex(rng, k)).expect("simplex point")
}

fn pinsker<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for _ in 0..1000 {
        let k = rng.random_range(2..=8);
        let (p, q) = (dist(rng, k), dist(rng, k));
        let c = pinsker_check(&p, &q)?;
        let margin = if c.kl_bound.is_infinite() { -1.0 } else { c.tv - c.kl_bound - 1e-12 };
        r.record("tv <= sqrt(kl/2)", margin);
    }
    Ok(())
}

fn kr<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for _ in 0..200 {
        let n = 100;
        let shift: f64 = rng.random_range(-2.0..2.0);
        let scale: f64 = rng.random_range(0.2..3.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        let (lo, hi) = (rng.random_range(-3.0..0.0), rng.random_range(0.0..3.0));
        let family = vec![
            TestFunction::linear(1.0),
            TestFunction::linear(-1.0),
            TestFunction::clipped(1.0, lo, hi)?,
            TestFunction::clipped(-1.0, lo, hi)?,
        ];
        let c = kr_duality_check(&x, &y, &family)?;
        r.record("dual <= primal", c.dual_lower - c.primal - 1e-9);
        let best = kr_duality_check(&x, &y, &[kantorovich_potential(&x, &y)?])?;
        r.record("potential attains primal", (best.dual_lower - best.primal).abs() - 1e-9 * (1.0 + best.primal));
        let z: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let t = kr_duality_check(&x, &z, &family[..2])?;
        r.record("translation attains primal", (t.dual_lower - t.primal).abs() - 1e-9);
    }
    Ok(())
}

fn coupling<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for _ in 0..200 {
        let k = rng.random_range(2..=5);
        let (p, q) = (dist(rng, k), dist(rng, k));
        let w = w1_discrete_metric(&p, &q)?;
        let oracle = discrete_metric_transport(p.probs(), q.probs())?;
        r.record("w1 discrete == optimal coupling", (w - oracle).abs() - 1e-9);
    }
    Ok(())
}

fn mixture<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for case in 0..200 {
        let g1 = (rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0));
        let g2 = (rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0));
        let c = mixture_wasserstein_check_gaussian(g1, g2, 2000, case)?;
        r.record("W(mix, P1) <= W(P2, P1) / 2", c.left - c.right - c.tolerance - 1e-12 * (1.0 + c.right));
    }
    Ok(())
}

fn telescoping(r: &mut SuiteResult, seed: u64) -> Result<()> {
    let model = HierarchicalModel::new(
        Topology::new(vec![2, 2])?,
        Kernel::gaussian(vec![1.0, 1.0])?,
        0.0,
    )?;
    let mc = MonteCarlo::new(20_000, seed).with_inner(16);
    let d = decomposition_terms_mc(&model, &Algorithm::LeafAverage, &Loss::Absolute, &mc)?;
    let gen = gen_error_mc(&model, &Algorithm::LeafAverage, &Loss::Absolute, &mc)?;
    let se = d.signed_total.std_error.hypot(gen.std_error);
    r.record("signed total == gen (3 SE)", (d.signed_total.mean - gen.mean).abs() - 3.0 * se);
    let layered: f64 = d.layer_sums(&model.topology).iter().sum();
    r.record("layer sums == signed total", (layered - d.signed_total.mean).abs() - 1e-12);
    r.record("|gen| <= absolute total", gen.mean.abs() - d.absolute_total - 1e-12);
    Ok(())
}

fn random_joint_markov<R: Rng>(rng: &mut R) -> Result<DiscreteJoint> {
    // U uniform and independent of (X, Y); W depends on (Y, U) only.
    let (kx, ky, kw) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4));
    let pxy = simplex(rng, kx * ky);
    let channel: Vec<Vec<f64>> = (0..ky * 2).map(|_| simplex(rng, kw)).collect();
    let mut t = Vec::with_capacity(kx * ky * 2 * kw);
    for x in 0..kx {
        for y in 0..ky {
            for u in 0..2 {
                for w in 0..kw {
                    t.push(pxy[x * ky + y] * 0.5 * channel[y * 2 + u][w]);
                }
            }
        }
    }
    DiscreteJoint::from_weights(&["X", "Y", "U", "W"], vec![kx, ky, 2, kw], t)
}

fn random_joint_bits<R: Rng>(rng: &mut R, bits: usize) -> Result<DiscreteJoint> {
    // Z arbitrary, J_1..J_k independent fair bits independent of Z, W | (Z, J).
    let (kz, kw) = (rng.random_range(2..=3), rng.random_range(2..=4));
    let pz = simplex(rng, kz);
    let js = 1usize << bits;
    let channel: Vec<Vec<f64>> = (0..kz * js).map(|_| simplex(rng, kw)).collect();
    let mut t = Vec::with_capacity(kz * js * kw);
    for z in 0..kz {
        for j in 0..js {
            for w in 0..kw {
                t.push(pz[z] / js as f64 * channel[z * js + j][w]);
            }
        }
    }
    let names: Vec<String> = (1..=bits).map(|i| format!("J{i}")).collect();
    let mut axes: Vec<&str> = vec!["Z"];
    axes.extend(names.iter().map(String::as_str));
    axes.push("W");
    let mut shape = vec![kz];
    shape.extend(std::iter::repeat_n(2, bits));
    shape.push(kw);
    DiscreteJoint::from_weights(&axes, shape, t)
}

fn orderings<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for _ in 0..200 {
        let j = random_joint_markov(rng)?;
        let by_x = j.cmi_sets(&["U"], &["W"], &["X"])?;
        let by_y = j.cmi_sets(&["U"], &["W"], &["Y"])?;
        let residual = j.cmi_sets(&["U"], &["Y"], &["X", "W"])?;
        r.record("I(U;W|X) <= I(U;W|Y)", by_x - by_y - EXACT_TOL);
        r.record("I(U;W|Y) - I(U;W|X) == I(U;Y|X,W)", (by_y - by_x - residual).abs() - EXACT_TOL);
    }
    for _ in 0..200 {
        let bits = rng.random_range(2..=3);
        let j = random_joint_bits(rng, bits)?;
        let names: Vec<String> = (1..=bits).map(|i| format!("J{i}")).collect();
        let all: Vec<&str> = names.iter().map(String::as_str).collect();
        let sum: f64 = all
            .iter()
            .map(|n| j.cmi_sets(&["W"], &[n], &["Z"]))
            .sum::<Result<f64>>()?;
        let joint = j.cmi_sets(&["W"], &all, &["Z"])?;
        r.record("sum_j I(W;J_j|Z) <= I(W;J|Z)", sum - joint - EXACT_TOL);
    }
    let shapes: [&[usize]; 5] = [&[1], &[2], &[3], &[1, 2], &[2, 2]];
    for case in 0..40 {
        let branching = shapes[case % shapes.len()].to_vec();
        let depth = branching.len();
        let transitions: Vec<Vec<Vec<f64>>> = (0..depth)
            .map(|_| (0..2).map(|_| simplex(rng, 2)).collect())
            .collect();
        let model = HierarchicalModel::new(Topology::new(branching)?, Kernel::discrete(transitions)?, 0.0)?;
        let e = exact_bounds(&model, rng.random_range(0.0..0.5))?;
        for n in &e.nodes {
            r.record("2 TV <= sqrt(2 KL) per node", n.pinsker_gap - EXACT_TOL);
            r.record("2 E TV <= E sqrt(2 I) per node", 2.0 * n.wasserstein - n.cmi_term - EXACT_TOL);
        }
        r.record("wasserstein total <= cmi total", e.wasserstein.total - e.cmi.total - EXACT_TOL);
    }
    for _ in 0..40 {
        let toy = SubtreeToy {
            root: simplex(rng, 2),
            leaf: (0..2).map(|_| simplex(rng, 2)).collect(),
            leaves: rng.random_range(1..=2),
            flip: rng.random_range(0.0..0.5),
        };
        let o = toy.ordering()?;
        r.record("pair cmi <= subtree cmi", o.pair_cmi - o.subtree_cmi - EXACT_TOL);
        r.record("subtree gap == I(U;Y|X,W)", (o.subtree_cmi - o.pair_cmi - o.residual).abs() - EXACT_TOL);
    }
    Ok(())
}

fn dp_ratio(r: &mut SuiteResult) -> Result<()> {
    for eps in [0.1f64, 0.5, 1.0] {
        let ratio = laplace_likelihood_ratio(eps, 1.0, 1e-3)?;
        r.record("laplace ratio <= e^eps", ratio - eps.exp() * (1.0 + 1e-6));
        for k in 2..=6 {
            for a in 0..k {
                for b in 0..k {
                    let (p, q) = (randomized_response_row(a, k, eps), randomized_response_row(b, k, eps));
                    let worst = p.iter().zip(&q).map(|(x, y)| x / y).fold(0.0, f64::max);
                    r.record("randomized response ratio <= e^eps", worst - eps.exp() * (1.0 + 1e-12));
                }
            }
        }
    }
    Ok(())
}

fn glm_dominance<R: Rng>(r: &mut SuiteResult, rng: &mut R) -> Result<()> {
    for _ in 0..50 {
        let depth = rng.random_range(1..=3);
        let branching: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=4)).collect();
        let sigmas: Vec<f64> = (0..depth).map(|_| rng.random_range(0.1..2.0)).collect();
        let p = GlmParams::new(0.0, sigmas, Topology::new(branching)?)?;
        r.record("true gen <= wasserstein bound", glm_true_gen(&p) - glm_wasserstein_bound(&p).total);
    }
    for depth in 1..=3 {
        let n = rng.random_range(2..=4);
        let sigma = rng.random_range(0.1..2.0);
        let p = GlmParams::new(0.0, vec![sigma; depth], Topology::new(vec![n; depth])?)?;
        let ratio = glm_wasserstein_bound(&p).total / glm_taylor_gen(&p)?;
        r.record("homogeneous bound / taylor == sqrt(2L)", (ratio - (2.0 * depth as f64).sqrt()).abs() - 1e-9);
    }
    for n in [100usize, 400, 1000] {
        let p = GlmParams::new(0.0, vec![1.0], Topology::new(vec![n])?)?;
        let ratio = glm_wasserstein_bound(&p).total / glm_true_gen(&p);
        r.record("single layer bound / true ~ sqrt(2)", (ratio / 2f64.sqrt() - 1.0).abs() - 0.01);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for s in [Suite::Pinsker, Suite::CouplingOracle, Suite::DpLikelihoodRatio, Suite::GlmDominance] {
            let r = s.run(7).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn failures_are_counted() {
        let mut r = SuiteResult::new(Suite::Pinsker);
        r.record("x", -1.0);
        r.record("x", 0.5);
        let c = r.check("x").unwrap();
        assert_eq!((c.cases, c.failures, c.worst_margin), (2, 1, 0.5));
        assert!(!r.passed());
    }
}
