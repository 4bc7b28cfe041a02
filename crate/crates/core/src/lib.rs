//! Combined learning and control for scalar finite-horizon LQR with unknown
//! dynamics.
//!
//! The true system `x' = a_true x + b_true u` is reachable only through a
//! step oracle that counts episodes; a nominal model `x' = a_model x +
//! b_model u` is known. A policy is designed by dynamic programming on a
//! proxy cost that penalizes mismatch with a hypothesized real trajectory
//! (weights `beta`), the hypothesis is pinned down by solving the coupled
//! fixed-point equations against the oracle, and the penalty weights are
//! either prescribed in closed form or learned by finite-difference descent
//! on the realized cost. An exact Riccati solver provides the ground truth,
//! and three model-free baselines (policy gradient, random search, tabular
//! Q-learning) provide the sample-efficiency comparison.

pub mod baselines;
pub mod beta_learn;
pub mod clc_dp;
pub mod coupling;
pub mod error;
pub mod harness;
pub mod model;
pub mod riccati;

pub use error::{Error, Result};
