//! Sampling and greedy top-K search for 2D isometric tensor network states.

pub mod error;
pub mod grid;
pub mod harness;
pub mod mps;
pub mod states;
pub mod tensor;

pub use error::{Error, Result};
