//! Learning to rank question-answer pairs with bilateral generation.
//!
//! The crate is organized bottom-up:
//!
//! - [`text`]: tokenization and the shared domain types (pairs, groups, rankings).
//! - [`ingest`]: the TAB-delimited dataset format and corpus statistics.
//! - [`scorer`]: the differentiable relevance model and its analytic gradients.
//! - [`objectives`]: pointwise, pairwise, set-pairwise and contrastive losses.
//! - [`augment`]: generator corpora, pseudo-positive synthesis and the augmentation cache.
//! - [`metrics`]: MAP, MRR, P@k and nDCG@k.
//! - [`trainer`]: the SGD loop that ties everything together.
//! - [`gradcheck`]: finite-difference verification of every loss composed with the scorer.
//! - [`synthetic`]: a topic-token benchmark for desk-scale experiments.

pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod ingest;
pub mod metrics;
pub mod objectives;
pub mod scorer;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use text::{tokenize, AugmentedGroup, Label, QAPair, QuestionGroup, RankedList, Text};
