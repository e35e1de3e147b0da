//! Outlier-aware classification by joint quadruplet metric learning and
//! focal-loss classification, with embedding-space analytics.
//!
//! Labels live in `{-1, 0, .., C-1}` where `-1` marks objects foreign to the
//! task. The model maps features to a `d`-dimensional embedding and a
//! classifier head scores `C + 1` classes (softmax index 0 is class `-1`).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
