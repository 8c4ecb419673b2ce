//! Cross-entropy optimization with interchangeable sampling laws and
//! selection schemes, the stochastic counterexamples it struggles with, and
//! a seeded benchmark harness comparing the basic, expectation and
//! smooth-selection variants against exact enumeration.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod families;
pub mod problems;
pub mod report;

pub use error::{CeError, Result};
