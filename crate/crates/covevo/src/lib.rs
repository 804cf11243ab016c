//! Coverage-guided neuroevolution of feed-forward MLPs for semi-supervised
//! binary classification.
//!
//! A genetic algorithm searches over list-based network descriptors (hidden
//! widths, activations, weight initializers, dropout and batch-norm flags).
//! Candidates are trained from scratch on the labeled part of the training
//! data and scored by a fitness that blends balanced accuracy on a validation
//! set with a neuron-coverage signal computed on the unlabeled part, so the
//! search can still exploit instances whose labels were removed. Certainty
//! and pseudo-label-retraining baselines share the same blending frame.
//!
//! The [`experiment`] module drives full dataset x unlabeled-proportion x
//! strategy grids and writes deterministic CSV and SVG outputs; the `covevo`
//! binary in the companion CLI crate wraps it.

pub mod activation;
pub mod coverage;
pub mod data;
pub mod descriptor;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod fitness;
pub mod init;
pub mod network;
pub mod plot;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
