//! Privacy-masked data release for logistic regression.
//!
//! The release pipeline trains a regularized logistic-regression classifier,
//! perturbs it with spherical-Laplace noise calibrated to the classifier's
//! sensitivity, and then synthesizes a masked dataset whose regularized
//! log-likelihood gradient vanishes at the noisy classifier. Anyone retraining
//! on the masked data recovers (numerically) the noisy classifier, while the
//! masked samples themselves depend on the private data only through it.
//!
//! The crate also ships the input-perturbation baseline and an experiment
//! harness that sweeps the privacy budget and reports accuracy statistics.
//!
//! Modules:
//! - [`dataset`]: labeled datasets, CSV I/O, normalization, generators, splits.
//! - [`model`]: logistic regression objective, gradient, trainer, accuracy.
//! - [`noise`]: spherical-Laplace sampling and output perturbation.
//! - [`maskgen`]: incremental masked-sample synthesis.
//! - [`perturb`]: the input-perturbation baseline.
//! - [`harness`]: sweeps, bound checks, and reporting.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod exec;
pub mod harness;
mod linalg;
pub mod maskgen;
pub mod model;
pub mod noise;
pub mod optim;
pub mod perturb;
pub mod rng;

pub use dataset::{LabelColumn, LabeledDataset, LabeledSample, MixtureComponent, MixtureSpec};
pub use error::{Error, Result};
pub use exec::Execution;
pub use maskgen::{MaskGenOptions, MaskReport, MaskState, MaskedRelease};
pub use model::{Mode, ModelParams, Solver, TrainOptions};
pub use noise::{NoiseRate, PrivacyBudget};
