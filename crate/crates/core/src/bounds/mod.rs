//! Generalization bound evaluators.
//!
//! Every evaluator returns a [`BoundReport`] carrying per-layer
//! contributions, the metric the Wasserstein terms were computed under and
//! the loss assumptions that make the bound apply. Layers are numbered
//! `1..=L` by the node layer whose selector the term probes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::Metric;
use crate::stats::stable_sum;
use crate::topology::{NodePath, Topology};

pub mod discrete;
mod glm;
mod mc;

pub use glm::{
    glm_cmi_bound_mc, glm_taylor_gen, glm_true_gen, glm_wasserstein_bound, GlmParams,
};
pub use mc::{subtree_bound_mc, wasserstein_bound_mc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    Wasserstein,
    Cmi,
    Subtree,
    Dp,
    GlmExact,
    GlmTaylor,
    GlmWasserstein,
}

impl BoundFamily {
    pub fn name(self) -> &'static str {
        match self {
            BoundFamily::Wasserstein => "wasserstein",
            BoundFamily::Cmi => "cmi",
            BoundFamily::Subtree => "subtree",
            BoundFamily::Dp => "dp",
            BoundFamily::GlmExact => "glm_exact",
            BoundFamily::GlmTaylor => "glm_taylor",
            BoundFamily::GlmWasserstein => "glm_wasserstein",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerContribution {
    pub layer: usize,
    pub contribution: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub family: BoundFamily,
    /// Metric of the Wasserstein terms; `None` for bounds without one.
    pub metric: Option<Metric>,
    pub per_layer: Vec<LayerContribution>,
    pub total: f64,
    pub total_std_error: f64,
    pub loss_bound_used: Option<(f64, f64)>,
    pub lipschitz_used: Option<f64>,
}

impl BoundReport {
    pub(crate) fn new(
        family: BoundFamily,
        metric: Option<Metric>,
        per_layer: Vec<LayerContribution>,
        total_std_error: f64,
    ) -> Self {
        let total = stable_sum(per_layer.iter().map(|c| c.contribution));
        BoundReport {
            family,
            metric,
            per_layer,
            total,
            total_std_error,
            loss_bound_used: None,
            lipschitz_used: None,
        }
    }

    /// A report whose contributions are exact.
    pub(crate) fn exact(family: BoundFamily, metric: Option<Metric>, contributions: &[f64]) -> Self {
        let per_layer = contributions
            .iter()
            .enumerate()
            .map(|(i, &c)| LayerContribution {
                layer: i + 1,
                contribution: c,
                std_error: 0.0,
            })
            .collect();
        BoundReport::new(family, metric, per_layer, 0.0)
    }

    pub(crate) fn with_loss_bound(mut self, range: (f64, f64)) -> Self {
        self.loss_bound_used = Some(range);
        self
    }

    pub(crate) fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz_used = Some(lipschitz);
        self
    }

    pub fn contributions(&self) -> Vec<f64> {
        self.per_layer.iter().map(|c| c.contribution).collect()
    }
}

/// `sum_l (1/N_l) sum_i sqrt(2 I_i)` from one mutual information value per
/// node of layers `1..=L`.
pub fn cmi_bound(topology: &Topology, per_node_cmi: &BTreeMap<NodePath, f64>) -> Result<BoundReport> {
    let weighted = per_node_cmi
        .iter()
        .map(|(p, &v)| (p.clone(), vec![(1.0, v)]))
        .collect();
    cmi_bound_weighted(topology, &weighted)
}

/// Like [`cmi_bound`], but each node carries `(weight, I)` samples of the
/// conditional information across the values of its supersample pair; the
/// node term is the weighted mean of `sqrt(2 I)`.
pub fn cmi_bound_weighted(
    topology: &Topology,
    per_node: &BTreeMap<NodePath, Vec<(f64, f64)>>,
) -> Result<BoundReport> {
    let mut sums = vec![Vec::new(); topology.depth()];
    let mut seen = 0usize;
    for (path, samples) in per_node {
        topology.validate(path)?;
        if path.is_root() {
            return Err(Error::Argument("the root carries no selector".into()));
        }
        if samples.is_empty() {
            return Err(Error::Argument(format!("no information samples for node {path}")));
        }
        let mut total_w = 0.0;
        let mut terms = Vec::with_capacity(samples.len());
        for &(w, i) in samples {
            if i.is_nan() || i < 0.0 {
                return Err(Error::Argument(format!("negative information {i} at node {path}")));
            }
            if w.is_nan() || w < 0.0 {
                return Err(Error::Argument(format!("negative weight {w} at node {path}")));
            }
            total_w += w;
            terms.push(w * (2.0 * i).sqrt());
        }
        if total_w <= 0.0 {
            return Err(Error::Argument(format!("zero total weight at node {path}")));
        }
        sums[path.layer() - 1].push(stable_sum(terms) / total_w);
        seen += 1;
    }
    if seen != topology.node_count() {
        return Err(Error::Argument(format!(
            "information given for {seen} of {} nodes",
            topology.node_count()
        )));
    }
    let contributions: Vec<f64> = sums
        .into_iter()
        .enumerate()
        .map(|(l, v)| stable_sum(v) / topology.size(l + 1) as f64)
        .collect();
    Ok(BoundReport::exact(BoundFamily::Cmi, None, &contributions).with_loss_bound((0.0, 1.0)))
}

/// Per-layer `2 sqrt(min(eps, eps (e^eps - 1)))` for losses in `[0, 1]`.
pub fn dp_bound(epsilons: &[f64]) -> Result<BoundReport> {
    if let Some(e) = epsilons.iter().find(|e| e.is_nan() || **e < 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {e}")));
    }
    let contributions: Vec<f64> = epsilons
        .iter()
        .map(|&e| 2.0 * e.min(e * e.exp_m1()).sqrt())
        .collect();
    Ok(BoundReport::exact(BoundFamily::Dp, None, &contributions).with_loss_bound((0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dp_examples() {
        assert_eq!(dp_bound(&[0.0, 0.0]).unwrap().total, 0.0);
        let r = dp_bound(&[0.1, 0.1]).unwrap();
        let want = 4.0 * (0.1 * 0.1f64.exp_m1()).sqrt();
        assert!((r.total - want).abs() < 1e-15);
        assert!((r.total - 0.41024).abs() < 1e-4);
        assert_eq!(r.per_layer.len(), 2);
        assert_eq!(dp_bound(&[1.0]).unwrap().total, 2.0);
        assert!(matches!(dp_bound(&[0.1, -0.1]), Err(Error::Argument(_))));
    }

    #[test]
    fn dp_switches_branch_at_ln2() {
        let ln2 = std::f64::consts::LN_2;
        let below = dp_bound(&[ln2 - 1e-9]).unwrap().total;
        let above = dp_bound(&[ln2 + 1e-9]).unwrap().total;
        assert!((below - above).abs() < 1e-8);
        assert!(dp_bound(&[0.5]).unwrap().total < 2.0 * 0.5f64.sqrt());
    }

    #[test]
    fn dp_monotone() {
        let mut last = 0.0;
        for k in 0..200 {
            let t = dp_bound(&[0.02 * k as f64, 0.3]).unwrap().total;
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn cmi_examples() {
        let t = Topology::new(vec![1]).unwrap();
        let p1 = NodePath::new(vec![1]).unwrap();
        let mut m = BTreeMap::new();
        m.insert(p1.clone(), 0.0);
        assert_eq!(cmi_bound(&t, &m).unwrap().total, 0.0);
        m.insert(p1.clone(), 2f64.ln());
        let r = cmi_bound(&t, &m).unwrap();
        assert!((r.total - (2.0 * 2f64.ln()).sqrt()).abs() < 1e-15);
        assert!((r.total - 1.1774).abs() < 1e-4);
        m.insert(p1, -0.1);
        assert!(matches!(cmi_bound(&t, &m), Err(Error::Argument(_))));
    }

    #[test]
    fn cmi_requires_every_node() {
        let t = Topology::new(vec![2]).unwrap();
        let mut m = BTreeMap::new();
        m.insert(NodePath::new(vec![1]).unwrap(), 0.1);
        assert!(cmi_bound(&t, &m).is_err());
        m.insert(NodePath::new(vec![2]).unwrap(), 0.1);
        let r = cmi_bound(&t, &m).unwrap();
        assert!((r.total - (0.2f64).sqrt()).abs() < 1e-15);
    }
}
