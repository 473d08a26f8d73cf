//! Ornstein-Uhlenbeck processes perturbed by singular monotone drifts.
//!
//! The linear part lives on a diagonal Galerkin truncation ([`GalerkinModel`]).
//! Drifts from the [`DriftSpec`] catalog are regularized by their Yosida
//! approximants, integrated along exactly sampled OU paths, and checked
//! against pathwise a priori bounds, Girsanov density bounds and
//! uniform-integrability statistics.

pub mod drift;
pub mod ensemble;
pub mod error;
pub mod girsanov;
pub mod integrator;
pub mod model;
pub mod ou;
pub mod phi;
pub mod pseudoweak;
pub mod psi;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod sweep;
pub mod tail;

pub use drift::{BoundFn, DriftSpec, Modulation};
pub use error::{Error, Result};
pub use model::{validate_model, GalerkinModel, ModelParams, StateVector};
pub use ou::{sample_ou_path, PathGrid, SamplePath};
pub use integrator::{integrate_z, PathBounds, RegularizedSolution, StoppingRecord};
pub use phi::PhiFunction;
pub use girsanov::DensityEnsemble;
pub use pseudoweak::{PsiMap, TestFamily};
pub use psi::PsiSpec;
pub use sweep::{alpha_sweep, SweepConfig, SweepReport};
pub use tail::{TailFunction, TailProbability};
