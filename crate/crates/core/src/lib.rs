//! Toolkit for mining music descriptions from article text, training a
//! two-tower text-audio model with a contrastive objective, filtering mined
//! text by cross-modal relevance, and evaluating tag-based retrieval and
//! zero-shot tagging.
//!
//! Pipeline stages map onto modules:
//!
//! * [`corpus`] - data model, ingestion heuristics, persistence, statistics
//! * [`textminer`] - token-classification taggers and span decoding
//! * [`encoders`] - audio/text towers projecting into a shared embedding space
//! * [`contrastive`] - NT-Xent loss, batch construction, training schedule
//! * [`relevance`] - block-averaged cosine scoring and dataset filtering
//! * [`evalharness`] - retrieval and zero-shot metrics
//! * [`cli`] - the `musematch` command-line entry point

pub mod audio;
pub mod cli;
pub mod contrastive;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evalharness;
pub mod nn;
pub mod relevance;
pub mod textminer;

pub use error::{Error, Result};
