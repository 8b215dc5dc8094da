//! Adversarially learned convex regularization with a source-condition
//! penalty, variational solvers (gradient descent and Bregman iteration),
//! and a toy tomography pipeline for desk-scale experiments.

pub mod cg;
pub mod data;
pub mod error;
pub mod metrics;
pub mod op;
pub mod reg;
pub mod rng;
pub mod solve;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
