//! Laboratory for listener scoring-scale modeling.
//!
//! Simulates listener-biased rating datasets, trains attribute scorers on
//! direct scores or on same-listener comparisons, and evaluates them at the
//! system level (comparison aggregation) or the utterance level.

pub mod cli;
pub mod comparison;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod scorer;
pub mod simulator;

pub use error::{Error, Result};
