//! Distances and information quantities between distributions.
//!
//! All logarithms are natural, so KL divergences and mutual informations are
//! in nats.

mod dist;
mod information;
mod mixture;
pub mod transport;
mod wasserstein;

pub use dist::{kl, pinsker_check, tv, DiscreteDist, PinskerCheck};
pub use information::{cmi_discrete, mi_discrete, DiscreteJoint};
pub use mixture::{cmi_gaussian_mixture, GaussianMixturePair};
pub use wasserstein::{
    kantorovich_potential, kr_duality_check, mixture_wasserstein_check,
    mixture_wasserstein_check_gaussian, tv_empirical, w1_discrete_metric, w1_empirical, KrCheck,
    MixtureCheck, TestFunction,
};
