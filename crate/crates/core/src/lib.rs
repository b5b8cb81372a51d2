//! Finding approximate second-order stationary points of a hidden smooth
//! function `F` when only a pointwise-close surrogate `f` can be queried.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expsearch;
pub mod hardfn;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod problems;
pub mod relu;
pub mod rng;
pub mod smoothing;
pub mod stationarity;

pub use error::{Error, Result};
pub use oracle::{make_pair, reset_counter, FunctionPairOracle, Oracle, StochasticGradient, TruthView};
pub use rng::RngStream;
