//! Fairness generalization gaps and their information-theoretic bounds.

pub mod bounds;
pub mod data;
pub mod error;
pub mod fairness;
pub mod harness;
pub mod miest;
pub mod oracles;
pub mod trainer;

pub use error::{Error, Result};
