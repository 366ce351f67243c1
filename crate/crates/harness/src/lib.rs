//! Experiment orchestration for the `mbac` crate: configuration, MDP
//! generators, seeded sweeps with parallel replication, aggregation, flat-file
//! export and the acceptance suite behind `mbac check`.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiment;
pub mod export;
pub mod generate;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, AggregateResult};
