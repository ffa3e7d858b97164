//! Weaver: a span-extraction reading-comprehension model built on a
//! question/context co-encoding grid, trained end to end with a small
//! reverse-mode autodiff engine. The crate also ships the surrounding
//! machinery a full QA pipeline needs: tokenization and feature
//! extraction, dataset ingestion, a hashed TF-IDF retriever, the official
//! evaluation metrics, and a CLI for training and experiments.

pub mod checkpoint;
pub mod cli;
pub mod coencode;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod reader;
pub mod retriever;
pub mod rng;
pub mod tensor;
pub mod train;
