//! Supervised learning across two tables that share no features.
//!
//! A primary table carries the target; a secondary table carries extra
//! features for the same entities but no key to join on. Training learns the
//! record correspondence jointly with the predictor: a trainable cluster
//! sampler proposes `K` candidate secondary records per primary record and an
//! attention stack softly aligns them.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod par;
pub mod sampler;
pub mod tensor;
pub mod training;

pub use error::{LealError, Result};
