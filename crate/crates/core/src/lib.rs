//! Debiasing generative trees: tree-partitioned Gaussian-mixture data
//! augmentation for treatment-effect estimation.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: observational data model, CSV ingestion, splitting.
//! - [`trees`]: CART regression trees, extremely randomised forests,
//!   cost-complexity pruning and leaf partitions.
//! - [`gmm`]: full-covariance Gaussian mixtures fitted by EM, BIC selection,
//!   sampling.
//! - [`augment`]: the augmentation procedure itself (single tree and forest
//!   variants).
//! - [`estimators`]: base regressors, propensity model, S/T/X meta-learners
//!   and cross-fitted DML.
//! - [`metrics`]: PEHE, ATE/ATT errors, policy risk, relative deltas and
//!   confidence-interval aggregation.
//! - [`datagen`]: synthetic generators with known potential outcomes.
//! - [`bench`]: the benchmark harness behind the `degets` binary.

pub mod augment;
pub mod bench;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod metrics;
pub mod rng;
pub mod trees;

pub use error::{Error, Result};
