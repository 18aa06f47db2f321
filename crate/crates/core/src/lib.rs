//! Shallow ReLU networks in the lazy-training regime, their neural tangent
//! kernel, gradient descent on kernel least squares, and data-dependent early
//! stopping, with seeded experiments that measure the predicted scalings.

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod net;
pub mod ntk;
pub mod rng;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};
