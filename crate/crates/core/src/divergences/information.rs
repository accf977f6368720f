//! Exact (conditional) mutual information on finite joint tables.

use serde::Serialize;

use super::dist::DiscreteDist;
use crate::error::{Error, Result};
use crate::stats::stable_sum;

const NORM_TOL: f64 = 1e-12;

/// A probability table over named finite variables, stored row-major with
/// the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteJoint {
    axes: Vec<String>,
    shape: Vec<usize>,
    table: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(axes: Vec<String>, shape: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if axes.len() != shape.len() || axes.is_empty() {
            return Err(Error::Argument("one size per axis, at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::Argument(format!("duplicate axis {a:?}")));
            }
        }
        let cells = shape.iter().try_fold(1usize, |acc, &k| {
            if k == 0 {
                None
            } else {
                acc.checked_mul(k)
            }
        });
        if cells != Some(table.len()) {
            return Err(Error::Argument(format!(
                "table has {} cells, shape {shape:?}",
                table.len()
            )));
        }
        if table.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Argument("table entries must be finite and >= 0".into()));
        }
        let total = stable_sum(table.iter().copied());
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Argument(format!("table sums to {total}, not 1")));
        }
        Ok(DiscreteJoint { axes, shape, table })
    }

    /// Builds a table from unnormalized weights.
    pub fn from_weights(axes: &[&str], shape: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total = stable_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Argument("weights must have a positive finite sum".into()));
        }
        DiscreteJoint::new(
            axes.iter().map(|s| s.to_string()).collect(),
            shape,
            weights.into_iter().map(|w| w / total).collect(),
        )
    }

    pub fn axes(&self) -> &[String] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn axis(&self, name: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Argument(format!("no axis named {name:?}")))
    }

    fn axis_set(&self, names: &[&str]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.axis(n)).collect()
    }

    /// Flat index of the sub-tuple on `axes` for every cell.
    fn group_index(&self, axes: &[usize]) -> (Vec<usize>, usize) {
        let size: usize = axes.iter().map(|&a| self.shape[a]).product();
        let mut idx = vec![0usize; self.table.len()];
        let mut coords = vec![0usize; self.shape.len()];
        for slot in idx.iter_mut() {
            *slot = axes.iter().fold(0, |acc, &a| acc * self.shape[a] + coords[a]);
            for k in (0..coords.len()).rev() {
                coords[k] += 1;
                if coords[k] < self.shape[k] {
                    break;
                }
                coords[k] = 0;
            }
        }
        (idx, size)
    }

    fn marginal_table(&self, axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let (idx, size) = self.group_index(axes);
        let mut out = vec![0.0; size];
        for (&i, &p) in idx.iter().zip(&self.table) {
            out[i] += p;
        }
        (idx, out)
    }

    /// Marginal law of one variable.
    pub fn marginal(&self, name: &str) -> Result<DiscreteDist> {
        let a = self.axis(name)?;
        let (_, probs) = self.marginal_table(&[a]);
        DiscreteDist::from_weights(&probs)
    }

    /// `I(A; B | C)` for sets of axes; `given` may be empty.
    pub fn cmi_sets(&self, a: &[&str], b: &[&str], given: &[&str]) -> Result<f64> {
        let a = self.axis_set(a)?;
        let b = self.axis_set(b)?;
        let c = self.axis_set(given)?;
        if a.is_empty() || b.is_empty() {
            return Err(Error::Argument("mutual information needs nonempty axis sets".into()));
        }
        let cat = |x: &[usize], y: &[usize]| -> Vec<usize> { x.iter().chain(y).copied().collect() };
        let (i_abc, p_abc) = self.marginal_table(&cat(&cat(&a, &b), &c));
        let (i_ac, p_ac) = self.marginal_table(&cat(&a, &c));
        let (i_bc, p_bc) = self.marginal_table(&cat(&b, &c));
        let (i_c, p_c) = self.marginal_table(&c);
        // One representative cell per (a, b, c) group.
        let mut seen = vec![false; p_abc.len()];
        let mut terms = Vec::new();
        for cell in 0..self.table.len() {
            let g = i_abc[cell];
            if seen[g] {
                continue;
            }
            seen[g] = true;
            let p = p_abc[g];
            if p > 0.0 {
                terms.push(p * (p * p_c[i_c[cell]] / (p_ac[i_ac[cell]] * p_bc[i_bc[cell]])).ln());
            }
        }
        Ok(stable_sum(terms).max(0.0))
    }
}

/// `I(A; B)` in nats.
pub fn mi_discrete(joint: &DiscreteJoint, a: &str, b: &str) -> Result<f64> {
    joint.cmi_sets(&[a], &[b], &[])
}

/// `I(A; B | C)` in nats: the `C`-weighted average of per-slice mutual
/// informations.
pub fn cmi_discrete(joint: &DiscreteJoint, a: &str, b: &str, given: &str) -> Result<f64> {
    joint.cmi_sets(&[a], &[b], &[given])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(p: f64) -> f64 {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }

    #[test]
    fn independent_table_has_zero_information() {
        let (pu, pw) = ([0.3, 0.7], [0.2, 0.5, 0.3]);
        let t: Vec<f64> = pu.iter().flat_map(|a| pw.iter().map(move |b| a * b)).collect();
        let j = DiscreteJoint::from_weights(&["U", "W"], vec![2, 3], t).unwrap();
        assert!(mi_discrete(&j, "U", "W").unwrap() < 1e-15);
    }

    #[test]
    fn perfect_channel() {
        let j = DiscreteJoint::from_weights(&["W", "U"], vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((mi_discrete(&j, "W", "U").unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn binary_symmetric_channel() {
        let f = 0.25;
        let t = vec![0.5 * (1.0 - f), 0.5 * f, 0.5 * f, 0.5 * (1.0 - f)];
        let j = DiscreteJoint::from_weights(&["U", "W"], vec![2, 2], t).unwrap();
        let mi = mi_discrete(&j, "U", "W").unwrap();
        assert!((mi - (2f64.ln() - h(0.25))).abs() < 1e-14);
        assert!((mi - 0.1308).abs() < 1e-4);
    }

    #[test]
    fn conditional_is_slice_average() {
        // Given Z = 0 the channel is perfect, given Z = 1 useless.
        let mut t = vec![0.0; 8];
        let at = |z: usize, u: usize, w: usize| z * 4 + u * 2 + w;
        for u in 0..2 {
            t[at(0, u, u)] = 0.25;
            for w in 0..2 {
                t[at(1, u, w)] = 0.125;
            }
        }
        let j = DiscreteJoint::from_weights(&["Z", "U", "W"], vec![2, 2, 2], t).unwrap();
        assert!((cmi_discrete(&j, "U", "W", "Z").unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!(matches!(cmi_discrete(&j, "U", "W", "Q"), Err(Error::Argument(_))));
    }

    #[test]
    fn marginals_are_distributions() {
        let j = DiscreteJoint::from_weights(&["A", "B"], vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((j.marginal("A").unwrap().probs()[0] - 0.3).abs() < 1e-15);
        assert!((j.marginal("B").unwrap().probs()[1] - 0.6).abs() < 1e-15);
    }
}
