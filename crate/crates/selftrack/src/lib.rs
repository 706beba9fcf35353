//! Query-based multi-object tracking with self-generated detection proposals.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod matching;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
