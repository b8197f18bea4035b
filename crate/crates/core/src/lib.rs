//! Desk-scale retrieval engine recommending related tweets to news articles.
//!
//! The pipeline mines positive pairs from articles with embedded tweets,
//! builds creator-context-aware dual-encoder models in four fusion
//! structures (Base, Early, Intermediate, Late), trains them with in-batch
//! negatives, and evaluates dense retrieval against a BM25 baseline.

pub mod bm25;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod retrieval;
pub mod synth;
pub mod textprep;
pub mod training;

pub use error::{Error, Result};
