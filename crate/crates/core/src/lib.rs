//! Multimodal (image + text) meme classification toolkit.
//!
//! The pipeline runs manifest loading and stratified folds ([`corpus`]),
//! tokenization and image normalization ([`preprocess`]), embedding
//! ([`encoders`]), the classification heads ([`fusion`], [`ensemble`]),
//! training ([`training`]) and evaluation/reporting ([`eval`]).

pub mod config;
pub mod corpus;
pub mod encoders;
pub mod ensemble;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod training;
