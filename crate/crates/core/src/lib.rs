//! Generalization bounds for learning on hierarchically sampled data.

pub mod bounds;
pub mod divergences;
pub mod dp_round;
pub mod error;
pub mod hierarchy;
pub mod risk;
pub mod stats;
pub mod stream;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};
pub use hierarchy::{DatasetTree, Kernel, KernelKind, Selector, SelectorRule, SupersampleTree};
pub use risk::{Algorithm, HierarchicalModel, Loss, Metric, MonteCarlo};
pub use stats::GenEstimate;
pub use stream::{Purpose, Streams};
pub use topology::{NodePath, Topology};
