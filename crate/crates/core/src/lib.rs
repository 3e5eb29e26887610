//! Differentially private peer-prediction surveys.
//!
//! A surveyor wants the fraction of a population holding a sensitive bit.
//! Bits cannot be verified, and agents pay a privacy cost for taking part.
//! The mechanism in [`mechanism`] publishes a Laplace-perturbed average and
//! pays each participant with a shifted Brier score ([`scoring`]) of how
//! well its report predicts the perturbed average of everyone else. The
//! remaining modules sample priors, model agents, and verify the resulting
//! equilibrium, privacy, accuracy, and cost claims by simulation.

// Validation uses `!(x >= lo)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod mechanism;
pub mod priors;
pub mod privacy;
pub mod rng;
pub mod scoring;
pub mod stats;

pub use error::{Error, Result};
