//! Robust fixed-point smoothing for discrete-time uncertain nonlinear
//! systems whose uncertainty obeys a sum quadratic constraint.
//!
//! A forward-time filter over `[0, k]` and a reverse-time filter over
//! `[k, t]` each propagate a quadratic approximation of a dynamic
//! programming value function. Their sum at `k` defines a set-valued
//! estimate of the state `x_k`.

pub mod discretize;
pub mod error;
pub mod forward_filter;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod reverse_filter;
pub mod smoother;

mod recursion;

pub use error::{Error, Result};
