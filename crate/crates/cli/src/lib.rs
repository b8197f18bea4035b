//! Pipeline orchestration for the news-tweet retrieval engine: a structured
//! JSON configuration drives ingest through evaluation, with hash-stamped
//! artifacts on disk.

pub mod commands;
pub mod config;
pub mod pipeline;
