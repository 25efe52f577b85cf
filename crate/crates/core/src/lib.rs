//! Core library for minute-level livestream viewership analysis.
//!
//! The pipeline ingests stream metadata and minute observations into an
//! immutable [`panel::Panel`], then layers estimators on top: audience
//! overlap from stream-start viewer drops, end-of-stream viewer transfers,
//! concurrency dilution of per-stream audiences, channel loyalty components,
//! and schedule-coordination permutation tests. A built-in simulator
//! generates synthetic ecosystems with known ground truth for validating
//! the estimators end to end.

pub mod dilution;
pub mod error;
pub mod ingest;
pub mod loyalty;
pub mod overlap;
pub mod panel;
pub mod permtest;
pub mod rank;
pub mod report;
pub mod sim;
pub mod stats;
pub mod time;
pub mod transfer;

pub use error::{Error, Result};
