//! Tree shape and node addressing.
//!
//! Layer 0 is the meta-distribution at the root; layers `1..=L` hold sampled
//! nodes, layer `L` being the data points. Every node at layer `l - 1` has
//! exactly `n_l` children, so layer `l` has `N_l = n_1 * ... * n_l` nodes.
//!
//! Nodes within a layer are stored in lexicographic order of their index
//! path, which makes the flat offset of a node a mixed-radix number.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct Topology {
    branching: Vec<usize>,
    sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySpec {
    branching: Vec<usize>,
}

impl TryFrom<TopologySpec> for Topology {
    type Error = Error;

    fn try_from(spec: TopologySpec) -> Result<Self> {
        Topology::new(spec.branching)
    }
}

impl From<Topology> for TopologySpec {
    fn from(t: Topology) -> Self {
        TopologySpec {
            branching: t.branching,
        }
    }
}

impl Topology {
    pub fn new(branching: Vec<usize>) -> Result<Self> {
        if branching.is_empty() {
            return Err(Error::Config("topology needs at least one layer".into()));
        }
        if let Some(pos) = branching.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!(
                "branching factor of layer {} must be >= 1",
                pos + 1
            )));
        }
        let mut sizes = Vec::with_capacity(branching.len() + 1);
        sizes.push(1usize);
        for &n in &branching {
            let prev = *sizes.last().unwrap();
            let next = prev
                .checked_mul(n)
                .ok_or_else(|| Error::Config("layer size overflows usize".into()))?;
            sizes.push(next);
        }
        Ok(Topology { branching, sizes })
    }

    /// Number of sampled layers `L`.
    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    pub fn branching(&self) -> &[usize] {
        &self.branching
    }

    /// `n_l`, the number of children of each node at layer `l - 1`.
    pub fn branching_at(&self, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::Range(format!(
                "layer {layer} has no branching factor (depth {})",
                self.depth()
            )));
        }
        Ok(self.branching[layer - 1])
    }

    /// `N_l`; `N_0 = 1`.
    pub fn layer_size(&self, layer: usize) -> Result<usize> {
        self.sizes.get(layer).copied().ok_or_else(|| {
            Error::Range(format!("layer {layer} outside 0..={}", self.depth()))
        })
    }

    /// Unchecked variant for internal loops that already validated `layer`.
    pub(crate) fn size(&self, layer: usize) -> usize {
        self.sizes[layer]
    }

    pub fn leaf_count(&self) -> usize {
        self.sizes[self.depth()]
    }

    /// Total number of sampled nodes over layers `1..=L`.
    pub fn node_count(&self) -> usize {
        self.sizes[1..].iter().sum()
    }

    pub fn enumerate_paths(&self, layer: usize) -> Result<Vec<NodePath>> {
        let size = self.layer_size(layer)?;
        Ok((0..size).map(|offset| self.path_at(layer, offset)).collect())
    }

    /// Path of the node stored at `offset` within `layer`.
    pub fn path_at(&self, layer: usize, offset: usize) -> NodePath {
        let mut indices = vec![0u32; layer];
        let mut rest = offset;
        for k in (0..layer).rev() {
            let n = self.branching[k];
            indices[k] = (rest % n) as u32 + 1;
            rest /= n;
        }
        NodePath { indices }
    }

    /// Flat offset of `path` within its layer.
    pub fn offset_of(&self, path: &NodePath) -> Result<usize> {
        self.validate(path)?;
        Ok(path
            .indices
            .iter()
            .zip(&self.branching)
            .fold(0usize, |acc, (&i, &n)| acc * n + (i as usize - 1)))
    }

    pub fn validate(&self, path: &NodePath) -> Result<()> {
        if path.layer() > self.depth() {
            return Err(Error::Range(format!(
                "path {path} deeper than topology depth {}",
                self.depth()
            )));
        }
        for (k, (&i, &n)) in path.indices.iter().zip(&self.branching).enumerate() {
            if i == 0 || i as usize > n {
                return Err(Error::Range(format!(
                    "index {i} at layer {} outside 1..={n}",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Offsets at layer `target` of the descendants of the node at
    /// (`layer`, `offset`). Requires `target >= layer`.
    pub fn descendant_range(&self, layer: usize, offset: usize, target: usize) -> Range<usize> {
        debug_assert!(target >= layer);
        let span = self.sizes[target] / self.sizes[layer];
        offset * span..(offset + 1) * span
    }
}

/// Address `i_{1:l}` of a node; indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodePath {
    indices: Vec<u32>,
}

impl NodePath {
    pub fn root() -> Self {
        NodePath::default()
    }

    pub fn new(indices: Vec<u32>) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::Range("node indices are 1-based".into()));
        }
        Ok(NodePath { indices })
    }

    pub fn layer(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn is_root(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn parent(&self) -> Result<NodePath> {
        if self.is_root() {
            return Err(Error::Domain("the root has no parent".into()));
        }
        Ok(NodePath {
            indices: self.indices[..self.indices.len() - 1].to_vec(),
        })
    }

    pub fn child(&self, index: u32) -> Result<NodePath> {
        if index == 0 {
            return Err(Error::Range("node indices are 1-based".into()));
        }
        let mut indices = self.indices.clone();
        indices.push(index);
        Ok(NodePath { indices })
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.indices.is_empty() {
            return f.write_str("root");
        }
        let parts: Vec<String> = self.indices.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("."))
    }
}

impl Serialize for NodePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for NodePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "root" {
            return Ok(NodePath::root());
        }
        let indices = s
            .split('.')
            .map(|p| {
                p.parse::<u32>()
                    .map_err(|_| Error::Argument(format!("bad path component {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        NodePath::new(indices)
    }
}
