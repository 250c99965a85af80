//! Two-stage training on noisy web labels with self-contained confidence.
//!
//! Stage one fits a classifier to the raw web labels. Its predictions become
//! soft self labels, and its probability at each sample's web label becomes
//! that sample's confidence `c`. Stage two finetunes the same network on
//! `c * web_loss + (1 - c) * self_loss`. Confidences can be smoothed over a
//! cosine k-NN graph of hidden features and are scored against verified
//! labels with MSE, ECE and OCE.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calib;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod netcore;
pub mod pipeline;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
