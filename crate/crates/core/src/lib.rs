//! Topic-model evaluation workbench.
//!
//! The crate covers the whole evaluation loop: preprocessing ([`corpus`]),
//! reference-corpus co-occurrence statistics and coherence ([`cooc`]), a
//! collapsed Gibbs LDA baseline ([`lda`]), hyperparameter search and model
//! selection ([`select`]), human-evaluation survey items and scoring
//! ([`humaneval`]), and the statistics used to compare models ([`stats`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cooc;
pub mod corpus;
pub mod error;
pub mod humaneval;
pub mod lda;
pub mod rng;
pub mod select;
pub mod stats;
pub mod topic;

pub use error::{Error, Result};
