//! Certified, reusable runtime monitoring for past-time signal temporal logic.
//!
//! The crate is organised bottom-up:
//!
//! - [`logic`]: the formula language (parsing, printing, horizon and support queries).
//! - [`robustness`]: exact quantitative semantics, windowed extrema and the two bases.
//! - [`fragment`]: atomic dictionaries and compiled min/max decoders.
//! - [`conformal`]: scores, split-conformal quantiles, calibration and certified bounds.
//! - [`monitors`]: online rolling, semantic and observer monitors.
//! - [`benchmark`]: crossroad simulator, predicate suite, noisy predictor stubs, datasets.
//! - [`report`]: evaluation metrics and horizon sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod conformal;
mod error;
pub mod fragment;
pub mod logic;
pub mod monitors;
pub mod report;
pub mod robustness;
mod rng;

pub use error::{Error, Result};
