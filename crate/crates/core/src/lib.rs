//! Fourier neural operators with an isotropic (D4-constrained) spectral
//! kernel, plus everything needed to train and check them on 2D Darcy flow:
//! FFTs, a reverse-mode backward pass, Adam with cosine annealing, a
//! finite-difference Darcy solver, error metrics and binary file formats.

pub mod darcy;
pub mod error;
pub mod grad;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod suites;
pub mod symmetry;
pub mod train;

pub use error::{Error, Result};
