//! Projected gradient descent for one-hidden-layer networks whose weights live
//! in a compact set (sparse, ℓ1, low-rank, nuclear, subspace, convolutional),
//! with diagnostics for the loss landscape around the planted weights.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod analysis;
pub mod cnn;
pub mod constraints;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod pgd;
pub mod quadrature;
pub mod randact;

pub use activation::{zeta, zeta_interval, ActivationKind, LipschitzConstants};
pub use constraints::{covering_dimension, ConstraintSpec, CovDimResult, CovModel, SubspaceBasis};
pub use error::{Error, Result};
pub use model::{Dataset, OutputVector, WeightMatrix};
pub use pgd::{pgd_run, pgd_run_batched, pgd_step, BatchSchedule, PgdConfig, PgdTrace};
