//! Sampling kernels, dataset trees and the supersample construction.
//!
//! Internal payloads are scalars standing for the distribution they
//! parameterize (the mean of a Gaussian, the success probability of a
//! Bernoulli, a symbol of a finite alphabet); leaf payloads are data points.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{Purpose, Streams};
use crate::topology::{NodePath, Topology};

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// Child ~ N(parent, sigma_l^2).
    GaussianLocation { sigmas: Vec<f64> },
    /// Internal children ~ Beta(k p, k (1 - p)); leaves ~ Bernoulli(p).
    BoundedBernoulli { concentration: f64 },
    /// Child symbol drawn from row `parent` of the layer's transition
    /// matrix. Layer 1 uses row `root_param`.
    DiscreteFinite { transitions: Vec<Vec<Vec<f64>>> },
}

/// A sampling kernel, optionally with nodes pinned to fixed payloads.
/// Pinned nodes make sampling position dependent: the node ignores its
/// parent and always takes the pinned value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct Kernel {
    kind: KernelKind,
    pinned: BTreeMap<NodePath, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpec {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concentration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transitions: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pinned: BTreeMap<NodePath, f64>,
}

impl TryFrom<KernelSpec> for Kernel {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        let extra = |name: &str, present: bool| {
            if present {
                Err(Error::Config(format!(
                    "field {name:?} does not apply to kernel {:?}",
                    spec.kind
                )))
            } else {
                Ok(())
            }
        };
        let kind = match spec.kind.as_str() {
            "gaussian_location" => {
                extra("concentration", spec.concentration.is_some())?;
                extra("transitions", spec.transitions.is_some())?;
                let sigmas = spec
                    .sigmas
                    .clone()
                    .ok_or_else(|| Error::Config("gaussian_location needs sigmas".into()))?;
                KernelKind::GaussianLocation { sigmas }
            }
            "bounded_bernoulli" => {
                extra("sigmas", spec.sigmas.is_some())?;
                extra("transitions", spec.transitions.is_some())?;
                KernelKind::BoundedBernoulli {
                    concentration: spec.concentration.unwrap_or(2.0),
                }
            }
            "discrete_finite" => {
                extra("sigmas", spec.sigmas.is_some())?;
                extra("concentration", spec.concentration.is_some())?;
                let transitions = spec
                    .transitions
                    .clone()
                    .ok_or_else(|| Error::Config("discrete_finite needs transitions".into()))?;
                KernelKind::DiscreteFinite { transitions }
            }
            other => return Err(Error::Config(format!("unknown kernel type {other:?}"))),
        };
        let kernel = Kernel {
            kind,
            pinned: spec.pinned,
        };
        kernel.check_parameters()?;
        Ok(kernel)
    }
}

impl From<Kernel> for KernelSpec {
    fn from(k: Kernel) -> Self {
        let mut spec = KernelSpec {
            kind: String::new(),
            sigmas: None,
            concentration: None,
            transitions: None,
            pinned: k.pinned,
        };
        match k.kind {
            KernelKind::GaussianLocation { sigmas } => {
                spec.kind = "gaussian_location".into();
                spec.sigmas = Some(sigmas);
            }
            KernelKind::BoundedBernoulli { concentration } => {
                spec.kind = "bounded_bernoulli".into();
                spec.concentration = Some(concentration);
            }
            KernelKind::DiscreteFinite { transitions } => {
                spec.kind = "discrete_finite".into();
                spec.transitions = Some(transitions);
            }
        }
        spec
    }
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Result<Self> {
        let k = Kernel {
            kind,
            pinned: BTreeMap::new(),
        };
        k.check_parameters()?;
        Ok(k)
    }

    pub fn gaussian(sigmas: Vec<f64>) -> Result<Self> {
        Kernel::new(KernelKind::GaussianLocation { sigmas })
    }

    pub fn bernoulli(concentration: f64) -> Result<Self> {
        Kernel::new(KernelKind::BoundedBernoulli { concentration })
    }

    pub fn discrete(transitions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Kernel::new(KernelKind::DiscreteFinite { transitions })
    }

    pub fn with_pinned(mut self, path: NodePath, value: f64) -> Result<Self> {
        if path.is_root() {
            return Err(Error::Config("the root cannot be pinned".into()));
        }
        if !value.is_finite() {
            return Err(Error::Config("pinned payloads must be finite".into()));
        }
        self.pinned.insert(path, value);
        Ok(self)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn pinned(&self) -> &BTreeMap<NodePath, f64> {
        &self.pinned
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, KernelKind::GaussianLocation { .. })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, KernelKind::DiscreteFinite { .. })
    }

    /// Alphabet size of a discrete kernel.
    pub fn alphabet(&self) -> Option<usize> {
        match &self.kind {
            KernelKind::DiscreteFinite { transitions } => {
                transitions.first().map(|t| t.first().map_or(0, Vec::len))
            }
            _ => None,
        }
    }

    fn check_parameters(&self) -> Result<()> {
        match &self.kind {
            KernelKind::GaussianLocation { sigmas } => {
                if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(Error::Config(format!("sigma {s} must be finite and >= 0")));
                }
            }
            KernelKind::BoundedBernoulli { concentration } => {
                if !(concentration.is_finite() && *concentration > 0.0) {
                    return Err(Error::Config("concentration must be positive".into()));
                }
            }
            KernelKind::DiscreteFinite { transitions } => {
                let k = transitions.first().and_then(|t| t.first()).map_or(0, Vec::len);
                if k == 0 {
                    return Err(Error::Config("empty transition matrix".into()));
                }
                for (l, matrix) in transitions.iter().enumerate() {
                    if l > 0 && matrix.len() != k {
                        return Err(Error::Config(format!(
                            "transition matrix of layer {} must have {k} rows",
                            l + 1
                        )));
                    }
                    for row in matrix {
                        if row.len() != k {
                            return Err(Error::Config("transition rows must have equal length".into()));
                        }
                        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                            return Err(Error::Config("transition entries must be >= 0".into()));
                        }
                        let total: f64 = row.iter().sum();
                        if (total - 1.0).abs() > ROW_TOLERANCE {
                            return Err(Error::Config(format!(
                                "transition row sums to {total}, expected 1"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the kernel against a topology and root parameter.
    pub fn validate(&self, topology: &Topology, root_param: f64) -> Result<()> {
        self.check_parameters()?;
        let depth = topology.depth();
        match &self.kind {
            KernelKind::GaussianLocation { sigmas } => {
                if sigmas.len() != depth {
                    return Err(Error::Config(format!(
                        "{} sigmas for a depth-{depth} topology",
                        sigmas.len()
                    )));
                }
                if !root_param.is_finite() {
                    return Err(Error::Config("root parameter must be finite".into()));
                }
            }
            KernelKind::BoundedBernoulli { .. } => {
                if !(0.0..=1.0).contains(&root_param) {
                    return Err(Error::Config("bernoulli root parameter must lie in [0, 1]".into()));
                }
            }
            KernelKind::DiscreteFinite { transitions } => {
                if transitions.len() != depth {
                    return Err(Error::Config(format!(
                        "{} transition matrices for a depth-{depth} topology",
                        transitions.len()
                    )));
                }
                let rows = transitions[0].len();
                if root_param.fract() != 0.0 || root_param < 0.0 || root_param as usize >= rows {
                    return Err(Error::Config(format!(
                        "root symbol {root_param} is not a row of the first transition matrix"
                    )));
                }
            }
        }
        for path in self.pinned.keys() {
            topology
                .validate(path)
                .map_err(|e| Error::Config(format!("pinned node: {e}")))?;
        }
        Ok(())
    }
}

/// A kernel bound to a topology and root parameter, ready to draw.
#[derive(Debug, Clone)]
pub(crate) struct Sampler<'a> {
    pub topology: &'a Topology,
    pub kernel: &'a Kernel,
    pub root_param: f64,
    pinned: HashMap<(usize, usize), f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(topology: &'a Topology, kernel: &'a Kernel, root_param: f64) -> Result<Self> {
        kernel.validate(topology, root_param)?;
        let pinned = kernel
            .pinned
            .iter()
            .map(|(p, &v)| Ok(((p.layer(), topology.offset_of(p)?), v)))
            .collect::<Result<_>>()?;
        Ok(Sampler {
            topology,
            kernel,
            root_param,
            pinned,
        })
    }

    /// Draws the payload of node (`layer`, `offset`) given its parent's
    /// payload (the root parameter for layer 1).
    pub fn draw<R: Rng + ?Sized>(&self, layer: usize, offset: usize, parent: f64, rng: &mut R) -> f64 {
        if !self.pinned.is_empty() {
            if let Some(&v) = self.pinned.get(&(layer, offset)) {
                return v;
            }
        }
        self.draw_free(layer, parent, rng)
    }

    fn draw_free<R: Rng + ?Sized>(&self, layer: usize, parent: f64, rng: &mut R) -> f64 {
        match &self.kernel.kind {
            KernelKind::GaussianLocation { sigmas } => {
                let z: f64 = StandardNormal.sample(rng);
                parent + sigmas[layer - 1] * z
            }
            KernelKind::BoundedBernoulli { concentration } => {
                let p = parent.clamp(0.0, 1.0);
                if layer == self.topology.depth() {
                    if rng.random::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                } else if p <= 0.0 || p >= 1.0 {
                    p
                } else {
                    Beta::new(concentration * p, concentration * (1.0 - p))
                        .expect("beta parameters are positive")
                        .sample(rng)
                }
            }
            KernelKind::DiscreteFinite { transitions } => {
                let row = &transitions[layer - 1][parent as usize];
                sample_categorical(row, rng) as f64
            }
        }
    }

    /// Fills `leaves` with the leaf payloads of the subtree rooted at
    /// (`layer`, `offset`) whose payload is `value`, drawing every
    /// descendant from `rng` in layer order. `scratch` is reused storage.
    pub fn fill_below<R: Rng + ?Sized>(
        &self,
        layer: usize,
        offset: usize,
        value: f64,
        rng: &mut R,
        scratch: &mut Vec<f64>,
        leaves: &mut [f64],
    ) {
        let depth = self.topology.depth();
        if layer == depth {
            leaves[0] = value;
            return;
        }
        scratch.clear();
        scratch.push(value);
        let mut next = Vec::with_capacity(leaves.len());
        for k in layer + 1..=depth {
            let n = self.topology.branching()[k - 1];
            let first = self.topology.descendant_range(layer, offset, k).start;
            next.clear();
            for (j, &parent) in scratch.iter().enumerate() {
                for c in 0..n {
                    next.push(self.draw(k, first + j * n + c, parent, rng));
                }
            }
            std::mem::swap(scratch, &mut next);
        }
        leaves.copy_from_slice(scratch);
    }

    /// Draws one fresh leaf below node (`layer`, `offset`) with payload
    /// `value`, following a uniformly chosen child at every step.
    pub fn draw_chain<R: Rng + ?Sized>(&self, layer: usize, offset: usize, value: f64, rng: &mut R) -> f64 {
        let mut v = value;
        let mut off = offset;
        for k in layer + 1..=self.topology.depth() {
            let n = self.topology.branching()[k - 1];
            let child = if self.pinned.is_empty() || n == 1 {
                0
            } else {
                rng.random_range(0..n)
            };
            off = off * n + child;
            v = self.draw(k, off, v, rng);
        }
        v
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall back to the last
    // symbol with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A realized dataset: payloads for every node of layers `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTree {
    topology: Topology,
    layers: Vec<Vec<f64>>,
}

impl DatasetTree {
    pub fn from_layers(topology: Topology, layers: Vec<Vec<f64>>) -> Result<Self> {
        if layers.len() != topology.depth() {
            return Err(Error::Config("one payload vector per layer required".into()));
        }
        for (l, v) in layers.iter().enumerate() {
            if v.len() != topology.size(l + 1) {
                return Err(Error::Config(format!("layer {} has the wrong size", l + 1)));
            }
        }
        Ok(DatasetTree { topology, layers })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Payloads of `layer` (1-based) in lexicographic order.
    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.layers[layer - 1]
    }

    pub fn leaves(&self) -> &[f64] {
        self.layers.last().expect("depth >= 1")
    }

    pub fn payload(&self, path: &NodePath) -> Result<f64> {
        if path.is_root() {
            return Err(Error::Domain("the root carries no sampled payload".into()));
        }
        let offset = self.topology.offset_of(path)?;
        Ok(self.layers[path.layer() - 1][offset])
    }

    pub fn payloads(&self) -> BTreeMap<NodePath, f64> {
        let mut map = BTreeMap::new();
        for (l, values) in self.layers.iter().enumerate() {
            for (off, &v) in values.iter().enumerate() {
                map.insert(self.topology.path_at(l + 1, off), v);
            }
        }
        map
    }
}

/// Draws a dataset tree. Node (`l`, `offset`) of `trial` always reads the
/// same stream, so identical inputs give bit-identical trees.
pub fn sample_tree(
    topology: &Topology,
    kernel: &Kernel,
    root_param: f64,
    streams: &Streams,
    trial: u64,
) -> Result<DatasetTree> {
    let sampler = Sampler::new(topology, kernel, root_param)?;
    Ok(sample_tree_with(&sampler, streams, trial, Purpose::Payload))
}

pub(crate) fn sample_tree_with(
    sampler: &Sampler<'_>,
    streams: &Streams,
    trial: u64,
    purpose: Purpose,
) -> DatasetTree {
    let topology = sampler.topology;
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(topology.depth());
    for l in 1..=topology.depth() {
        let n = topology.branching()[l - 1];
        let values = (0..topology.size(l))
            .map(|off| {
                let parent = if l == 1 {
                    sampler.root_param
                } else {
                    layers[l - 2][off / n]
                };
                let mut rng = streams.rng(trial, l, off, purpose);
                sampler.draw(l, off, parent, &mut rng)
            })
            .collect();
        layers.push(values);
    }
    DatasetTree {
        topology: topology.clone(),
        layers,
    }
}

/// Regenerates node `at` from its parent's payload together with its whole
/// subtree; at the root every layer is redrawn from the root parameter.
/// Nodes outside the subtree keep their payloads bit for bit.
pub fn resample_subtree(
    tree: &DatasetTree,
    at: &NodePath,
    kernel: &Kernel,
    root_param: f64,
    streams: &Streams,
    trial: u64,
) -> Result<DatasetTree> {
    let sampler = Sampler::new(&tree.topology, kernel, root_param)?;
    let at_offset = tree.topology.offset_of(at)?;
    let mut out = tree.clone();
    let start = at.layer().max(1);
    for l in start..=tree.topology.depth() {
        let n = tree.topology.branching()[l - 1];
        let range = if at.is_root() {
            0..tree.topology.size(l)
        } else {
            tree.topology.descendant_range(at.layer(), at_offset, l)
        };
        for off in range {
            let parent = if l == 1 {
                root_param
            } else {
                out.layers[l - 2][off / n]
            };
            let mut rng = streams.rng(trial, l, off, Purpose::Resample);
            out.layers[l - 1][off] = sampler.draw(l, off, parent, &mut rng);
        }
    }
    Ok(out)
}

/// Keeps node `at` and redraws everything strictly below it from its
/// payload. This is the law of test points rooted at `at`.
pub fn resample_below(
    tree: &DatasetTree,
    at: &NodePath,
    kernel: &Kernel,
    root_param: f64,
    streams: &Streams,
    trial: u64,
) -> Result<DatasetTree> {
    if at.is_root() {
        return resample_subtree(tree, at, kernel, root_param, streams, trial);
    }
    let sampler = Sampler::new(&tree.topology, kernel, root_param)?;
    let at_offset = tree.topology.offset_of(at)?;
    let mut out = tree.clone();
    for l in at.layer() + 1..=tree.topology.depth() {
        let n = tree.topology.branching()[l - 1];
        for off in tree.topology.descendant_range(at.layer(), at_offset, l) {
            let parent = out.layers[l - 2][off / n];
            let mut rng = streams.rng(trial, l, off, Purpose::Resample);
            out.layers[l - 1][off] = sampler.draw(l, off, parent, &mut rng);
        }
    }
    Ok(out)
}

/// Which of the two supersample copies a node selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Selector {
    One,
    Two,
}

impl Selector {
    /// `3 - U`.
    pub fn flipped(self) -> Selector {
        match self {
            Selector::One => Selector::Two,
            Selector::Two => Selector::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Selector::One => 0,
            Selector::Two => 1,
        }
    }

    /// The value `U` in `{1, 2}`.
    pub fn value(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_index(i: usize) -> Selector {
        if i == 0 {
            Selector::One
        } else {
            Selector::Two
        }
    }

    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Selector {
        if rng.random::<bool>() {
            Selector::Two
        } else {
            Selector::One
        }
    }
}

/// How selectors are assigned when building a supersample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorRule {
    Uniform,
    /// Every selector fixed; a test hook.
    Fixed(Selector),
}

/// Two i.i.d. copies per node plus one selector per node. Both copies of a
/// node are drawn from the copy its parent selected.
#[derive(Debug, Clone, PartialEq)]
pub struct SupersampleTree {
    topology: Topology,
    pairs: Vec<Vec<[f64; 2]>>,
    selectors: Vec<Vec<Selector>>,
}

impl SupersampleTree {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn pair(&self, path: &NodePath) -> Result<(f64, f64)> {
        let (l, off) = self.locate(path)?;
        let [a, b] = self.pairs[l - 1][off];
        Ok((a, b))
    }

    pub fn selector(&self, path: &NodePath) -> Result<Selector> {
        let (l, off) = self.locate(path)?;
        Ok(self.selectors[l - 1][off])
    }

    fn locate(&self, path: &NodePath) -> Result<(usize, usize)> {
        if path.is_root() {
            return Err(Error::Domain("the root has no supersample pair".into()));
        }
        Ok((path.layer(), self.topology.offset_of(path)?))
    }

    pub(crate) fn pairs_at(&self, layer: usize) -> &[[f64; 2]] {
        &self.pairs[layer - 1]
    }

    pub(crate) fn selectors_at(&self, layer: usize) -> &[Selector] {
        &self.selectors[layer - 1]
    }

    /// The same supersample with every selector flipped.
    pub fn flipped(&self) -> SupersampleTree {
        let mut out = self.clone();
        for layer in &mut out.selectors {
            for s in layer.iter_mut() {
                *s = s.flipped();
            }
        }
        out
    }

    /// Projects the selected copy at every node.
    pub fn select(&self) -> DatasetTree {
        self.project(false)
    }

    /// Projects the ghost (unselected) copy at every node.
    pub fn ghost_select(&self) -> DatasetTree {
        self.project(true)
    }

    fn project(&self, ghost: bool) -> DatasetTree {
        let layers = self
            .pairs
            .iter()
            .zip(&self.selectors)
            .map(|(pairs, sels)| {
                pairs
                    .iter()
                    .zip(sels)
                    .map(|(pair, s)| {
                        let s = if ghost { s.flipped() } else { *s };
                        pair[s.index()]
                    })
                    .collect()
            })
            .collect();
        DatasetTree {
            topology: self.topology.clone(),
            layers,
        }
    }
}

pub fn sample_supersample(
    topology: &Topology,
    kernel: &Kernel,
    root_param: f64,
    streams: &Streams,
    trial: u64,
    rule: SelectorRule,
) -> Result<SupersampleTree> {
    let sampler = Sampler::new(topology, kernel, root_param)?;
    Ok(sample_supersample_with(&sampler, streams, trial, rule))
}

pub(crate) fn sample_supersample_with(
    sampler: &Sampler<'_>,
    streams: &Streams,
    trial: u64,
    rule: SelectorRule,
) -> SupersampleTree {
    let topology = sampler.topology;
    let mut pairs: Vec<Vec<[f64; 2]>> = Vec::with_capacity(topology.depth());
    let mut selectors: Vec<Vec<Selector>> = Vec::with_capacity(topology.depth());
    for l in 1..=topology.depth() {
        let n = topology.branching()[l - 1];
        let size = topology.size(l);
        let mut layer_pairs = Vec::with_capacity(size);
        let mut layer_sels = Vec::with_capacity(size);
        for off in 0..size {
            let parent = if l == 1 {
                sampler.root_param
            } else {
                let p = off / n;
                pairs[l - 2][p][selectors[l - 2][p].index()]
            };
            let mut rng = streams.rng(trial, l, off, Purpose::Pair);
            let a = sampler.draw(l, off, parent, &mut rng);
            let b = sampler.draw(l, off, parent, &mut rng);
            layer_pairs.push([a, b]);
            let s = match rule {
                SelectorRule::Uniform => {
                    Selector::draw(&mut streams.rng(trial, l, off, Purpose::Selector))
                }
                SelectorRule::Fixed(s) => s,
            };
            layer_sels.push(s);
        }
        pairs.push(layer_pairs);
        selectors.push(layer_sels);
    }
    SupersampleTree {
        topology: topology.clone(),
        pairs,
        selectors,
    }
}
