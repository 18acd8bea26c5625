//! Core library for building tail-entity QA datasets from a knowledge graph
//! and evaluating answering and retrieval on them.

pub mod backend;
pub mod difficulty;
pub mod error;
pub mod eval;
pub mod filter;
pub mod generate;
pub mod kg;
pub mod rerank;
pub mod retrieval;
pub mod sampler;
pub mod synthetic;
pub mod text;
