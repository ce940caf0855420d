//! Branch-and-bound robustness verifier for feed-forward ReLU networks.
//!
//! The verifier combines a sound linear relaxation of ReLU (back-substitution
//! or LP-based triangle relaxation) with branch-and-bound over neuron sign
//! splits. Three search drivers are provided: classic FIFO branch-and-bound,
//! a greedy strategy ordered by counterexample potentiality, and a simulated
//! annealing variant of the same order. An exact enumeration oracle and a
//! benchmark harness support validation at desk scale.

pub mod harness;
pub mod heuristics;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod relax;
pub mod search;
pub mod spec;

#[cfg(test)]
pub(crate) mod test_util;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("lp solver failure: {0}")]
    Solver(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
