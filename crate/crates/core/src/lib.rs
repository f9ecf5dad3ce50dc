//! Feedback capacity of Gaussian channels described by linear state-space
//! models.
//!
//! The capacity is the value of a convex determinant-maximization program
//! ([`capacity::stationary_capacity`]) whose data come from the stationary
//! encoder Kalman filter ([`kalman`]). The crate ships its own log-det barrier
//! solver ([`sdp`]), detectability tests ([`detect`]), a finite-horizon
//! version of the program, Monte Carlo policy simulation ([`simulate`]) and
//! the baselines used to check the results.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod cli;
pub mod detect;
pub mod error;
pub mod kalman;
pub mod matops;
pub mod model;
pub mod sdp;
pub mod simulate;

pub use error::{Error, Result};
pub use matops::Mat;
pub use model::{Ar1Params, ChannelModel};
