//! Exact bound terms on small discrete trees.
//!
//! Every supersample state of a finite-alphabet tree is enumerated. The
//! hypothesis is the sum of the selected leaf symbols, replaced by a uniform
//! symbol with probability `flip`, and the loss is taken to be a zero-one
//! loss, which is 1-Lipschitz under the discrete metric. This gives the
//! Wasserstein terms (as total variations) and the CMI terms without any
//! sampling error.

use serde::Serialize;

use super::{BoundFamily, BoundReport};
use crate::divergences::{kl, tv, DiscreteDist, DiscreteJoint};
use crate::error::{Error, Result};
use crate::hierarchy::KernelKind;
use crate::risk::{HierarchicalModel, Metric};
use crate::stats::stable_sum;
use crate::topology::NodePath;

/// Largest number of supersample states enumerated.
pub const MAX_STATES: f64 = 4e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeTerms {
    pub layer: usize,
    pub path: NodePath,
    /// `E_{pair, U} TV(P_{W | pair, U}, P_{W | pair})`.
    pub wasserstein: f64,
    /// `E_pair sqrt(2 I(W; U | pair))`.
    pub cmi_term: f64,
    /// `I(W; U | pair)`.
    pub cmi: f64,
    /// Largest `2 TV - sqrt(2 KL)` over pair values and selectors; at most
    /// zero when Pinsker holds.
    pub pinsker_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactBounds {
    pub nodes: Vec<NodeTerms>,
    pub wasserstein: BoundReport,
    pub cmi: BoundReport,
}

struct Enumerator<'a> {
    transitions: &'a [Vec<Vec<f64>>],
    root: usize,
    alphabet: usize,
    branching: Vec<usize>,
    /// `(layer, offset)` in visiting order; parents precede children.
    order: Vec<(usize, usize)>,
    /// Per node, `[pair code][u][leaf sum]` probability.
    acc: Vec<Vec<f64>>,
    sums: usize,
    chosen: Vec<Vec<usize>>,
    picks: Vec<(usize, usize, usize)>,
}

impl Enumerator<'_> {
    fn visit(&mut self, k: usize, prob: f64) {
        if prob == 0.0 {
            return;
        }
        if k == self.order.len() {
            let depth = self.branching.len();
            let s: usize = self.chosen[depth - 1].iter().sum();
            for (j, &(a, b, u)) in self.picks.iter().enumerate() {
                let x = a * self.alphabet + b;
                self.acc[j][(x * 2 + u) * self.sums + s] += prob;
            }
            return;
        }
        let (l, off) = self.order[k];
        let parent = if l == 1 {
            self.root
        } else {
            self.chosen[l - 2][off / self.branching[l - 1]]
        };
        let row = &self.transitions[l - 1][parent];
        for a in 0..self.alphabet {
            for b in 0..self.alphabet {
                let p = row[a] * row[b] * 0.5;
                if p == 0.0 {
                    continue;
                }
                for u in 0..2 {
                    self.chosen[l - 1][off] = if u == 0 { a } else { b };
                    self.picks[k] = (a, b, u);
                    self.visit(k + 1, prob * p);
                }
            }
        }
    }
}

/// Exact node terms and both bound reports for a discrete-kernel model.
pub fn exact_bounds(model: &HierarchicalModel, flip: f64) -> Result<ExactBounds> {
    let transitions = match model.kernel.kind() {
        KernelKind::DiscreteFinite { transitions } => transitions,
        _ => return Err(Error::Unsupported("exact enumeration needs a discrete kernel".into())),
    };
    if !model.kernel.pinned().is_empty() {
        return Err(Error::Unsupported("exact enumeration does not support pinned nodes".into()));
    }
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::Argument(format!("flip probability {flip} outside [0, 1]")));
    }
    let t = &model.topology;
    let depth = t.depth();
    let alphabet = model.kernel.alphabet().expect("discrete kernel");
    let states = (2.0 * (alphabet * alphabet) as f64).powi(t.node_count() as i32);
    if states > MAX_STATES {
        return Err(Error::Unsupported(format!(
            "{states:.3e} supersample states exceed the enumeration limit"
        )));
    }
    let sums = t.leaf_count() * (alphabet - 1) + 1;
    let order: Vec<(usize, usize)> = (1..=depth)
        .flat_map(|l| (0..t.size(l)).map(move |off| (l, off)))
        .collect();
    let cells = alphabet * alphabet * 2 * sums;
    let mut e = Enumerator {
        transitions,
        root: model.root_param as usize,
        alphabet,
        branching: t.branching().to_vec(),
        acc: vec![vec![0.0; cells]; order.len()],
        order: order.clone(),
        sums,
        chosen: (1..=depth).map(|l| vec![0; t.size(l)]).collect(),
        picks: vec![(0, 0, 0); order.len()],
    };
    e.visit(0, 1.0);

    let pairs = alphabet * alphabet;
    let mut nodes = Vec::with_capacity(order.len());
    for (j, &(l, off)) in order.iter().enumerate() {
        let acc = &e.acc[j];
        let (mut wass, mut cmi_term, mut cmi, mut gap) = (Vec::new(), Vec::new(), Vec::new(), f64::NEG_INFINITY);
        for x in 0..pairs {
            let laws: Vec<Vec<f64>> = (0..2)
                .map(|u| {
                    let cell = &acc[(x * 2 + u) * sums..(x * 2 + u + 1) * sums];
                    let mass = stable_sum(cell.iter().copied());
                    // W | S: keep S with probability 1 - flip, else uniform.
                    let mut law: Vec<f64> = cell.iter().map(|p| (1.0 - flip) * p).collect();
                    law.iter_mut().for_each(|v| *v += flip * mass / sums as f64);
                    law
                })
                .collect();
            let px_u: Vec<f64> = laws.iter().map(|w| stable_sum(w.iter().copied())).collect();
            let px = px_u[0] + px_u[1];
            if px == 0.0 {
                continue;
            }
            let mix: Vec<f64> = (0..sums).map(|w| (laws[0][w] + laws[1][w]) / px).collect();
            let mix = DiscreteDist::from_weights(&mix)?;
            let mut info = Vec::new();
            for u in 0..2 {
                let cond = DiscreteDist::from_weights(&laws[u])?;
                let t_u = tv(&cond, &mix)?;
                let k_u = kl(&cond, &mix)?;
                wass.push(px_u[u] * t_u);
                info.push(px_u[u] / px * k_u);
                gap = gap.max(2.0 * t_u - (2.0 * k_u).sqrt());
            }
            let i_x = stable_sum(info);
            cmi.push(px * i_x);
            cmi_term.push(px * (2.0 * i_x).sqrt());
        }
        nodes.push(NodeTerms {
            layer: l,
            path: t.path_at(l, off),
            wasserstein: stable_sum(wass),
            cmi_term: stable_sum(cmi_term),
            cmi: stable_sum(cmi),
            pinsker_gap: gap,
        });
    }

    let layer_sum = |f: &dyn Fn(&NodeTerms) -> f64| -> Vec<f64> {
        (1..=depth)
            .map(|l| {
                stable_sum(nodes.iter().filter(|n| n.layer == l).map(f)) / t.size(l) as f64
            })
            .collect()
    };
    let wasserstein = BoundReport::exact(
        BoundFamily::Wasserstein,
        Some(Metric::Discrete),
        &layer_sum(&|n| 2.0 * n.wasserstein),
    )
    .with_lipschitz(1.0)
    .with_loss_bound((0.0, 1.0));
    let cmi = BoundReport::exact(BoundFamily::Cmi, None, &layer_sum(&|n| n.cmi_term))
        .with_loss_bound((0.0, 1.0));
    Ok(ExactBounds {
        nodes,
        wasserstein,
        cmi,
    })
}

/// A one-node toy for comparing pair conditioning with full-subtree
/// conditioning: the node's two copies are drawn from `root`, each copy has
/// `leaves` children drawn from `leaf[copy]`, and the hypothesis is the sum
/// of the selected copy's children, flipped to a uniform value with
/// probability `flip`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtreeToy {
    pub root: Vec<f64>,
    pub leaf: Vec<Vec<f64>>,
    pub leaves: usize,
    pub flip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubtreeOrdering {
    /// `I(U; W | X)`, X the node's pair.
    pub pair_cmi: f64,
    /// `I(U; W | Y)`, Y the realized children under both copies.
    pub subtree_cmi: f64,
    /// `I(U; Y | X, W)`, which should equal the difference.
    pub residual: f64,
}

impl SubtreeToy {
    pub fn joint(&self) -> Result<DiscreteJoint> {
        let k = self.root.len();
        let m = self.leaf.first().map_or(0, Vec::len);
        if k == 0 || m < 2 || self.leaf.len() != k || self.leaf.iter().any(|r| r.len() != m) || self.leaves == 0 {
            return Err(Error::Argument("malformed subtree toy".into()));
        }
        let root = DiscreteDist::new(self.root.clone())?;
        for row in &self.leaf {
            DiscreteDist::new(row.clone())?;
        }
        let per_copy = m.pow(self.leaves as u32);
        let ys = per_copy * per_copy;
        let sums = self.leaves * (m - 1) + 1;
        if (k * k * 2 * ys * sums) as f64 > MAX_STATES {
            return Err(Error::Unsupported("subtree toy too large to enumerate".into()));
        }
        let digits = |mut c: usize| -> Vec<usize> {
            (0..self.leaves)
                .map(|_| {
                    let d = c % m;
                    c /= m;
                    d
                })
                .collect()
        };
        let mut table = vec![0.0; k * k * 2 * ys * sums];
        for a in 0..k {
            for b in 0..k {
                let px = root.probs()[a] * root.probs()[b];
                for y1 in 0..per_copy {
                    let d1 = digits(y1);
                    let p1: f64 = d1.iter().map(|&s| self.leaf[a][s]).product();
                    for y2 in 0..per_copy {
                        let d2 = digits(y2);
                        let p2: f64 = d2.iter().map(|&s| self.leaf[b][s]).product();
                        let py = px * p1 * p2;
                        if py == 0.0 {
                            continue;
                        }
                        for u in 0..2 {
                            let s: usize = if u == 0 { d1.iter().sum() } else { d2.iter().sum() };
                            for w in 0..sums {
                                let pw = (1.0 - self.flip) * f64::from(w == s) + self.flip / sums as f64;
                                let idx = (((a * k + b) * 2 + u) * ys + y1 * per_copy + y2) * sums + w;
                                table[idx] += 0.5 * py * pw;
                            }
                        }
                    }
                }
            }
        }
        DiscreteJoint::from_weights(&["X", "U", "Y", "W"], vec![k * k, 2, ys, sums], table)
    }

    pub fn ordering(&self) -> Result<SubtreeOrdering> {
        let j = self.joint()?;
        Ok(SubtreeOrdering {
            pair_cmi: j.cmi_sets(&["U"], &["W"], &["X"])?,
            subtree_cmi: j.cmi_sets(&["U"], &["W"], &["Y"])?,
            residual: j.cmi_sets(&["U"], &["Y"], &["X", "W"])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Kernel;
    use crate::topology::Topology;

    fn model(branching: &[usize], transitions: Vec<Vec<Vec<f64>>>) -> HierarchicalModel {
        HierarchicalModel::new(
            Topology::new(branching.to_vec()).unwrap(),
            Kernel::discrete(transitions).unwrap(),
            0.0,
        )
        .unwrap()
    }

    fn binary(p: f64, q: f64) -> Vec<Vec<f64>> {
        vec![vec![1.0 - p, p], vec![1.0 - q, q]]
    }

    #[test]
    fn deterministic_leaves_carry_no_information() {
        let m = model(&[2], vec![binary(0.0, 0.0)]);
        let e = exact_bounds(&m, 0.0).unwrap();
        assert_eq!(e.wasserstein.total, 0.0);
        assert_eq!(e.cmi.total, 0.0);
    }

    #[test]
    fn single_coin_by_hand() {
        // One leaf, fair coin copies, W = selected copy. Given a pair with
        // distinct values, W reveals U: TV 1/2 and I = ln 2 per such pair.
        let m = model(&[1], vec![binary(0.5, 0.5)]);
        let e = exact_bounds(&m, 0.0).unwrap();
        let n = &e.nodes[0];
        assert!((n.wasserstein - 0.25).abs() < 1e-15);
        assert!((n.cmi - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((n.cmi_term - 0.5 * (2.0 * 2f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cmi_dominates_wasserstein_on_toys() {
        let m = model(&[2, 2], vec![binary(0.3, 0.3), binary(0.2, 0.7)]);
        for flip in [0.0, 0.1, 0.5] {
            let e = exact_bounds(&m, flip).unwrap();
            assert!(e.nodes.iter().all(|n| n.pinsker_gap <= 1e-12));
            assert!(e.nodes.iter().all(|n| 2.0 * n.wasserstein <= n.cmi_term + 1e-12));
            assert!(e.wasserstein.total <= e.cmi.total + 1e-12);
        }
    }

    #[test]
    fn too_large_is_unsupported() {
        let m = model(&[4, 4], vec![binary(0.3, 0.3), binary(0.2, 0.7)]);
        assert!(matches!(exact_bounds(&m, 0.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn subtree_conditioning_is_larger() {
        let toy = SubtreeToy {
            root: vec![0.4, 0.6],
            leaf: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            leaves: 2,
            flip: 0.1,
        };
        let o = toy.ordering().unwrap();
        assert!(o.pair_cmi <= o.subtree_cmi + 1e-10);
        assert!((o.subtree_cmi - o.pair_cmi - o.residual).abs() < 1e-10);
    }
}
