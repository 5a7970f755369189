//! Unsupervised dense retrieval by alternately bootstrapping a bi-encoder
//! retriever and a cross-style reranker from each other's rankings.

pub mod bm25;
pub mod bootstrap;
mod codec;
pub mod corpus;
pub mod dense;
mod error;
pub mod eval;
pub mod math;
pub mod optim;
pub mod rerank;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
