use std::path::{Path, PathBuf};

use hflgen::bounds::GlmParams;
use hflgen::dp_round::AggregationPlan;
use hflgen::{Algorithm, Error, HierarchicalModel, Kernel, KernelKind, Loss, Result, Topology};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: u32 = 1;

/// An experiment as read from disk. Everything except `output` feeds the
/// config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seed: u64,
    pub topology: Topology,
    pub kernel: Kernel,
    #[serde(default)]
    pub root_param: f64,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    #[serde(default = "absolute")]
    pub loss: Loss,
    /// Overrides the loss's own Lipschitz constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_bounds")]
    pub bounds: Vec<BoundChoice>,
    #[serde(default)]
    pub trials: Trials,
    /// Probability that the exact discrete engine replaces the hypothesis
    /// by a uniform symbol.
    #[serde(default)]
    pub flip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpSection>,
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

fn absolute() -> Loss {
    Loss::Absolute
}

fn default_bounds() -> Vec<BoundChoice> {
    vec![BoundChoice::Wasserstein]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    #[default]
    LeafAverage,
    NoisyLeafAverage { noise_sd: f64 },
}

impl AlgorithmSpec {
    pub fn build(self) -> Algorithm {
        match self {
            AlgorithmSpec::LeafAverage => Algorithm::LeafAverage,
            AlgorithmSpec::NoisyLeafAverage { noise_sd } => Algorithm::NoisyLeafAverage { noise_sd },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundChoice {
    Wasserstein,
    Subtree,
    Cmi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trials {
    #[serde(default = "default_outer")]
    pub outer: usize,
    #[serde(default = "default_inner")]
    pub inner: usize,
}

fn default_outer() -> usize {
    10_000
}

fn default_inner() -> usize {
    16
}

impl Default for Trials {
    fn default() -> Self {
        Trials {
            outer: default_outer(),
            inner: default_inner(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    Sigma,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::Sigma => "sigma",
        }
    }
}

/// Varies the branching factor or the kernel scale of one layer, or of
/// every layer when `layer` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    pub epsilons: Vec<f64>,
    pub range: (f64, f64),
    pub mechanism: Mechanism,
    /// Further epsilon schedules evaluated after `epsilons`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<Vec<f64>>,
}

impl DpSection {
    pub fn schedules(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.epsilons.clone())
            .chain(self.grid.iter().cloned())
            .collect()
    }

    pub fn plan(&self, epsilons: &[f64]) -> Result<AggregationPlan> {
        match self.mechanism {
            Mechanism::Laplace => AggregationPlan::laplace(epsilons, self.range),
        }
    }
}

/// One point of a sweep, with the sweep value it was built from.
#[derive(Debug, Clone)]
pub struct Point {
    pub x: f64,
    pub model: HierarchicalModel,
}

impl Point {
    pub fn glm(&self) -> Result<GlmParams> {
        match self.model.kernel.kind() {
            KernelKind::GaussianLocation { sigmas } if self.model.kernel.pinned().is_empty() => {
                GlmParams::new(self.model.root_param, sigmas.clone(), self.model.topology.clone())
            }
            _ => Err(Error::Config("expected an unpinned gaussian_location kernel".into())),
        }
    }
}

/// A loaded config plus its provenance.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    /// `sha256` of the raw file, hashed like a git blob.
    pub input_digest: String,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&bytes)?;
    Ok(Loaded {
        config,
        input_digest: blob_digest(&bytes),
    })
}

pub fn parse(bytes: &[u8]) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {} (expected {SCHEMA})",
                self.schema
            )));
        }
        self.loss.validate()?;
        self.algorithm.build().validate(&self.topology)?;
        if let Some(l) = self.lipschitz {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("lipschitz must be positive, got {l}")));
            }
        }
        if self.trials.outer < 2 || self.trials.inner < 1 {
            return Err(Error::Config("trials need outer >= 2 and inner >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip) {
            return Err(Error::Config(format!("flip must lie in [0, 1], got {}", self.flip)));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            if let Some(l) = s.layer {
                if l == 0 || l > self.topology.depth() {
                    return Err(Error::Config(format!("sweep layer {l} outside 1..={}", self.topology.depth())));
                }
            }
        }
        // Building every point surfaces kernel/topology mismatches up front.
        self.points()?;
        Ok(())
    }

    /// Canonical JSON: fixed field order, shortest round-trip floats.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn base_model(&self) -> Result<HierarchicalModel> {
        HierarchicalModel::new(self.topology.clone(), self.kernel.clone(), self.root_param)
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![Point {
                x: f64::NAN,
                model: self.base_model()?,
            }]);
        };
        let depth = self.topology.depth();
        let layers: Vec<usize> = match sweep.layer {
            Some(l) => vec![l],
            None => (1..=depth).collect(),
        };
        sweep
            .values
            .iter()
            .map(|&x| {
                let model = match sweep.axis {
                    Axis::N => {
                        if !(x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64) {
                            return Err(Error::Config(format!("n sweep values must be positive integers, got {x}")));
                        }
                        let mut branching = self.topology.branching().to_vec();
                        for &l in &layers {
                            branching[l - 1] = x as usize;
                        }
                        HierarchicalModel::new(Topology::new(branching)?, self.kernel.clone(), self.root_param)?
                    }
                    Axis::Sigma => {
                        let KernelKind::GaussianLocation { sigmas } = self.kernel.kind() else {
                            return Err(Error::Config("a sigma sweep needs a gaussian_location kernel".into()));
                        };
                        let mut sigmas = sigmas.clone();
                        for &l in &layers {
                            sigmas[l - 1] = x;
                        }
                        let mut kernel = Kernel::gaussian(sigmas)?;
                        for (p, v) in self.kernel.pinned() {
                            kernel = kernel.with_pinned(p.clone(), *v)?;
                        }
                        HierarchicalModel::new(self.topology.clone(), kernel, self.root_param)?
                    }
                };
                Ok(Point { x, model })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GLM: &str = r#"{
        "schema": 1, "seed": 7,
        "topology": {"branching": [4]},
        "kernel": {"type": "gaussian_location", "sigmas": [1.0]},
        "sweep": {"axis": "n", "values": [2, 4, 8]}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = parse(GLM.as_bytes()).unwrap();
        assert_eq!(c.loss, Loss::Absolute);
        assert_eq!(c.algorithm, AlgorithmSpec::LeafAverage);
        assert_eq!(c.bounds, vec![BoundChoice::Wasserstein]);
        let pts = c.points().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2].model.topology.branching(), &[8]);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_seed() {
        let extra = GLM.replace("\"seed\": 7", "\"seed\": 7, \"colour\": 1");
        assert!(matches!(parse(extra.as_bytes()), Err(Error::Config(_))));
        let no_seed = GLM.replace("\"seed\": 7,", "");
        assert!(matches!(parse(no_seed.as_bytes()), Err(Error::Config(_))));
        let schema = GLM.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(parse(schema.as_bytes()), Err(Error::Config(_))));
    }

    #[test]
    fn bad_sweeps_are_config_errors() {
        let frac = GLM.replace("[2, 4, 8]", "[2.5]");
        assert!(parse(frac.as_bytes()).is_err());
        let layer = GLM.replace("\"values\"", "\"layer\": 2, \"values\"");
        assert!(parse(layer.as_bytes()).is_err());
    }

    #[test]
    fn hash_ignores_output_and_formatting() {
        let a = parse(GLM.as_bytes()).unwrap();
        let spaced = GLM.replace(", ", ",\n   ");
        let mut b = parse(spaced.as_bytes()).unwrap();
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn blob_digest_matches_git() {
        // Empty-blob id of a sha256 git repository.
        assert_eq!(
            blob_digest(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
