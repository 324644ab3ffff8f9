//! Label-aware neural tangent kernels for two-layer networks: analytic and
//! empirical kernels, label-aware constructions, and evaluation tools.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod activation;
pub mod cli;
pub mod dataset;
pub mod elasticity;
pub mod error;
pub mod hoeffding;
pub mod hr;
pub mod kernel;
pub mod kernels_analytic;
pub mod linalg;
pub mod matfile;
pub mod net2;
pub mod nth;
pub mod regress;
pub mod rng;
pub mod synth;

pub use error::{LantkError, Result};
pub use kernel::{KernelMatrix, Provenance};
