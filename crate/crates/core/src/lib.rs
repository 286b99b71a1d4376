//! Prominent differences between image pairs.
//!
//! Relative-attribute rankers turn image descriptors into per-attribute
//! strength scores. From the scores of two images a symmetric pair feature is
//! built, and one calibrated linear classifier per attribute predicts how
//! likely that attribute is the difference a person would mention first.
//! The predictions drive attribute-feedback image search and comparative
//! descriptions.

// Negated float comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod describe;
pub mod error;
pub mod eval;
pub mod linear;
pub mod model_file;
pub mod predictor;
pub mod prominence;
pub mod ranker;
pub mod rng;
pub mod scores;
pub mod search;

pub use error::{Error, Result};
