//! Desk-scale laboratory for composing neural PDE surrogates along a
//! physical coordinate: parametric-family simulators, a compact spectral
//! operator with exact hand-written gradients, checkpoint storage with
//! lineage, weight-space merge algebra, coordinate selectors, rollout
//! metrics, and numerical continuation-bound audits.

pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod merge;
pub mod metrics;
pub mod operator;
pub mod select;
pub mod sim;
pub mod theory;
pub mod weights;

pub use checkpoint::{Checkpoint, Lineage, Role};
pub use error::{Error, Result};
pub use grid::{dft2, idft2, spectral_gradient, GridField, SpatialAxis, SpectralField};
pub use merge::{compose_at, decompose, CoordinateLine, Decomposition};
pub use operator::{Normalizer, Operator, OperatorConfig, RolloutResult, StepMap, TrainObjective};
pub use sim::{normalize_coordinate, FamilyKind, FamilySpec, RegimeRole, TrajectoryDataset};
pub use weights::{Schema, Tensor, WeightSet};
