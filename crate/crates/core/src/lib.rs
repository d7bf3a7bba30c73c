//! Convolutional autoencoder (FRnet-1) and dual-stride inception classifier
//! (FRnet-2) for drug-target interaction prediction, with the numerical
//! stack they run on and the cross-validated evaluation pipeline.
//!
//! Module map:
//!
//! - [`tensor`]: dense row-major `f32`/`f64` arrays
//! - [`autodiff`]: reverse-mode differentiation over a static graph
//! - [`nnops`]: convolution, pooling, dense, dropout and friends
//! - [`optim`]: Adam and the binary cross-entropy objective
//! - [`models`]: declarative network specs and their graphs
//! - [`data`]: dataset ingestion, scaling, padding and folds
//! - [`metrics`]: confusion rates, ROC/PR curves and their areas
//! - [`checkpoint`]: binary model files
//! - [`pipeline`]: training loops and the cross-validation driver
//! - [`synthetic`]: generated datasets for tests and smoke runs

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nnops;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
