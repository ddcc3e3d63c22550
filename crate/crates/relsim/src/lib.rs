//! Relation similarity from learned fact distributions.
//!
//! The core pipeline: load a knowledge base ([`kb`]), fit a locally
//! normalized fact distribution P(h,t|r) ([`factdist`]), turn divergences
//! between per-relation distributions into a similarity score
//! ([`similarity`]), then use the scores for redundancy detection
//! ([`redundancy`]), error analysis of relation-prediction models
//! ([`analysis`]), curriculum negative sampling for embedding baselines
//! ([`kge`]), and cost-aware softmax-margin training ([`margin`]).

pub mod analysis;
pub mod error;
pub mod factdist;
pub mod kb;
pub mod kge;
pub mod margin;
pub mod redundancy;
pub mod similarity;
pub mod util;

pub mod cli;

pub use error::{Error, Result};
pub use kb::{Triple, TripleStore};
pub use similarity::SimilarityMatrix;
