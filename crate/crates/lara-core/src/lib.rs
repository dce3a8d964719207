//! Price-movement forecasting built around two ideas: attend only over a
//! sample's metric neighborhood when deciding whether it is worth trading,
//! and iteratively refurbish noisy training labels while collecting the
//! intermediate models into an ensemble.
//!
//! The crate is organized along the data path:
//!
//! - [`dataset`]: CSV/synthetic record sources, fixed-horizon labeling,
//!   chronological splits, class balancing.
//! - [`metric`]: Mahalanobis metrics — identity and inverse-covariance
//!   baselines plus a sparse learned metric.
//! - [`neighbors`]: a small layered-graph ANN index with an exact
//!   brute-force twin for verification.
//! - [`attention`]: neighborhood probability estimates and the
//!   train/test-phase sample selection built on them.
//! - [`learner`]: deterministic gradient-boosted trees on logistic loss.
//! - [`refine`]: iterative label refurbishment and the per-round ensemble.
//! - [`backtest`]: signal selection, trade simulation, and the report.
//! - [`pipeline`]: the end-to-end run, seeded and byte-reproducible.

pub mod attention;
pub mod backtest;
pub mod dataset;
pub mod error;
pub mod learner;
pub mod metric;
pub mod neighbors;
pub mod pipeline;
pub mod refine;

pub use error::{Error, Result};
