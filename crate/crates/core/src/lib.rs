//! Infinity-norm radial basis networks with pseudogradient training.
//!
//! The library implements networks of radial units that compute
//! exp(-max_i (u_i (x_i - w_i))^2) or its complement, trains them with
//! substituted backward rules (pseudoderivatives) that carry learning signal
//! through the exponential's flat tail and the max's winner-take-all
//! bottleneck, bounds their worst-case input sensitivity in closed form,
//! and measures robustness under gradient and noise attacks. Dense ReLU and
//! sigmoid networks are included as baselines, with MNIST IDX ingestion and
//! a deterministic experiment harness on top.

// The kernels walk parallel slices by index on purpose; iterator zips would
// bury the arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod attack;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fastmath;
pub mod graph;
pub mod loss;
pub mod mnist;
pub mod network;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod sensitivity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
