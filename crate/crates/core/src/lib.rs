//! Multi-pooling 3D convolutional network for binary classification of fMRI
//! volumes, built from scratch.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major tensors, the matrix kernels and the seeded RNG.
//! - [`layers`]: forward and hand-written backward passes for every layer type,
//!   plus the finite-difference gradient checker.
//! - [`model`]: the multi-pooling network and its mainchain-only baseline.
//! - [`data_io`]: NIfTI-1 ingestion, dataset manifests, synthetic phantoms and
//!   parameter checkpoints.
//! - [`pipeline`]: volume averaging, class equalization, subject holdout and
//!   cross-validation fold planning.
//! - [`trainer`]: optimizers, per-fold training with best-checkpoint selection,
//!   majority-vote ensembling and reports.

pub mod data_io;
pub mod error;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Precision, Rng, Scalar, Tensor};
