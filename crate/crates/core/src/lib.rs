//! Score-matching estimators for compositional data on the simplex and for
//! multinomial counts driven by a latent composition.
//!
//! Models have density proportional to `prod u_j^beta_j * exp(u' A* u + b' u)` on the
//! simplex; estimators work on the square-root scale `z = sqrt(u)`.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod sampler;
pub mod score;
pub mod simulation;
pub mod stats;
pub mod weight;

pub use data::{ContinuousDataset, CountDataset, SphereData};
pub use error::{Error, Result};
pub use model::{index_map, Family, Label, ModelSpec, ParameterIndexMap};
pub use score::{fit_continuous, fit_counts, CountEstimator, FitResult};
pub use weight::{WeightKind, WeightSpec};
