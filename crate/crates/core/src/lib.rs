//! Semi-supervised pixel classification with a total-variation loss.
//!
//! A patch classifier is trained from a handful of labeled pixels per image.
//! Alongside the usual supervised loss, the anisotropic total variation of
//! the classifier's own probability maps is penalized on unlabeled pixels,
//! which pushes the learned labeling toward piecewise-constant regions.
//!
//! Modules, bottom-up:
//! - [`grid`]: scalar fields, Sobel filters and their adjoint.
//! - [`spatial`]: the spatial loss interface and total variation.
//! - [`model`]: the patch classifier with manual backpropagation.
//! - [`data`]: images, label maps, sparse label sets, PGM/PPM/CSV I/O and a
//!   synthetic dataset.
//! - [`trainer`]: supervised/unsupervised gradients, SGD and sliding-window
//!   prediction.
//! - [`mrf`]: Potts-model ICM smoothing used as a post-processing baseline.
//! - [`eval`]: pixel error and the multi-trial experiment protocol.
//! - [`gradcheck`]: finite-difference and adjoint verification suites.

pub mod error;
pub mod data;
pub mod grid;
pub mod model;
pub mod seed;
pub mod spatial;
pub mod trainer;
pub mod gradcheck;
pub mod mrf;
pub mod eval;

pub use error::{Error, Result};
