//! Linear abstraction of feedforward ReLU classifiers.
//!
//! Hidden neurons are replaced by linear combinations of a basis of
//! neurons in the same layer; the abstraction can be refined by restoring
//! neurons on counterexamples, and its output error is bounded in closed
//! form.

pub mod abstraction;
pub mod data_io;
pub mod error;
pub mod error_analysis;
pub mod experiment;
pub mod network;
pub mod numerics;
pub mod refinement;
pub mod syntactic;

pub use error::{Error, Result};
