//! Online multi-object tracking with center-point detection, Kalman motion maps
//! and per-object dynamic convolutional searchers.

mod error;
#[cfg(test)]
mod testutil;

pub mod losses;
pub mod motion;
pub mod eval;
pub mod nets;
pub mod numkernel;
pub mod scenegen;
pub mod searcher;
pub mod tracker;

pub use error::{Error, Result};
