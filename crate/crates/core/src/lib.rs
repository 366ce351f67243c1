//! Mini-batch Markovian actor-critic (AC) and natural actor-critic (NAC) on
//! finite MDPs.
//!
//! The crate is split into the learning algorithms and a set of exact
//! brute-force oracles used as ground truth:
//!
//! - [`mdp`]: tabular MDPs, validation, and the raw / restart-modified
//!   samplers that share one continuing sample path.
//! - [`policy`]: the softmax policy class over state-action features.
//! - [`oracle`]: exact value functions, visitation measures, gradients,
//!   Fisher matrices, TD fixed points, mixing and Lipschitz constants.
//! - [`critic`]: mini-batch TD and mini-batch linear stochastic approximation.
//! - [`actor`]: the outer actor-critic loop (AC and NAC variants).

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor;
pub mod critic;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod stats;

pub use error::{Error, Result};
