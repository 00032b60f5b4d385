//! Score-matching causal discovery.
//!
//! Synthetic additive Gaussian noise models ([`scm`]), a bias-free deep ReLU
//! score network ([`nn`]) trained by denoising score matching ([`dsm`]),
//! leaf-removal topological ordering and pruning ([`order`]), an OU diffusion
//! toy model ([`sgm`]) and the evaluation/sweep harness ([`eval`]).

pub mod dataset;
pub mod dsm;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod order;
pub mod rng;
pub mod scm;
pub mod sgm;
pub mod stats;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scm::{Dag, Scm};
