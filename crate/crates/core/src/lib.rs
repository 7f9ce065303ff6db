//! Query answering over incomplete knowledge graphs.
//!
//! This crate houses everything above the neural-network layer: graph and
//! split handling, the query-tree model with its fourteen named structures,
//! the exact symbolic oracle, the query sampler, the path/fork sequence
//! model, the training loop, and ranking evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kg;
pub mod model;
pub mod oracle;
pub mod query;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
