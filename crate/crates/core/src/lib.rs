//! Multi-source test-time adaptation.
//!
//! Several batch-normalized classifiers, each trained on its own source
//! domain, are combined on a stream of unlabeled test batches. For every
//! batch the combination weights are learned by entropy minimization over the
//! probability simplex, the weighted ensemble makes the prediction, and only
//! the source model with the largest weight is adapted.
//!
//! Modules, bottom up:
//! - [`matrix`], [`nn`], [`optim`]: dense math, the BN-MLP and its optimizers;
//! - [`scenario`]: synthetic domains, streams and source training;
//! - [`ensemble`]: the weight learner;
//! - [`adapters`]: single-model test-time adaptation;
//! - [`engine`]: the streaming loop, baselines and forgetting evaluation;
//! - [`records`]: CSV output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod records;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{MlpModel, NormMode};
