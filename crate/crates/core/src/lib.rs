//! Learns per-source importance weights for a retrieval corpus from gradients
//! of the multilinear extension of a retrieval-augmented model's utility, and
//! uses them to prune or reweight the corpus.

pub mod approx;
pub mod bench;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod exact_grad;
pub mod grouped;
pub mod mcmc;
pub mod oracle;
pub mod pb_tables;
pub mod prepared;
pub mod refine;
pub mod trainer;
pub mod weights;

pub use corpus::{Candidate, EvaluationSet, ValidationInstance};
pub use error::{Error, Result};
pub use exact_grad::{GradientLevel, GradientVector, Truncation};
pub use weights::SourceWeights;
