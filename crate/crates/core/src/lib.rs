//! Lightweight unsupervised word alignment.
//!
//! Two embedding tables are the only parameters. Sentences are
//! contextualized by windowed mean pooling, attend to each other in both
//! directions, and are trained with a sigmoid-NCE objective plus a penalty
//! that binds the two attention maps to be transposes of each other.
//! Hard alignments are read off the attention maps and optionally
//! symmetrized with grow-diag.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
