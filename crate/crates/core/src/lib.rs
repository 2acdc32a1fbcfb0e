//! Ranking-based group-robust training and DCG model selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: the small dense classifier every method trains.
//! - [`dataset`] and [`synth`]: grouped datasets, their CSV + sidecar format,
//!   and the synthetic shift benchmark generator.
//! - [`metrics`]: per-group statistics, worst-first rankings and the
//!   selection metrics (worst-group, average, percentile, gDCG@k, qDCG@k).
//! - [`train`]: ERM, discounted rank upweighting (qDRU/gDRU, +G/+M),
//!   Worst, Const, JTT and online Group DRO.
//! - [`select`]: concordance between validation metric rankings and test
//!   worst-group rankings of candidate models.
//! - [`stats`]: group t-statistics and bootstrap comparisons.
//! - [`harness`]: config-driven experiment orchestration behind the `rr` CLI.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod json;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod select;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
