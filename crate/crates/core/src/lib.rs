//! Sentiment-aware conversational agent toolkit.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`corpus`] loads labelled dialogue corpora and normalises them.
//! * [`encoding`] turns dialogues into classification / reply-prediction windows.
//! * [`classifier`] is the transformer classifier used for both tasks.
//! * [`retrieval`] provides nearest-neighbour label lookup and sentiment embeddings.
//! * [`lexicon`] builds the sentiment lexicons that condition the generator.
//! * [`generator`] is the lexicon-conditioned dialogue decoder.
//! * [`metrics`] holds every automatic evaluation measure.
//! * [`agent`] composes predictor and generator into a chat agent and HTTP service.

pub mod agent;
pub mod classifier;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod generator;
pub mod label;
pub mod lexicon;
pub mod metrics;
pub mod nn;
pub mod retrieval;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use label::SentimentLabel;
