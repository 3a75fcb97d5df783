//! Virtual-perturbation diagnostics for stochastic gradient descent.
//!
//! The crate runs plain SGD on small analytic models, replays predictable
//! history-adaptive Gaussian covariance schedules alongside the recorded
//! trajectory, estimates the information-theoretic bound proxies
//! (gradient deviation, gradient sensitivity, covariance-comparison cost and
//! output sensitivity), assembles the resulting generalization bounds, and
//! ships brute-force oracles for the Gaussian relative-entropy lemmas the
//! bounds rest on.
//!
//! The crate is `no_std` (with `alloc`); file formats, configuration and the
//! command-line tool live in the `vperturb` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bound;
pub mod error;
pub mod gauss;
mod math;
pub mod proxies;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod train;
pub mod verify;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use gauss::{Covariance, GaussianMoments};
pub use rng::RandomStream;
