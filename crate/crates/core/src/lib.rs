//! Feature-group sequencing for anytime linear prediction.
//!
//! Given a feature matrix partitioned into costed groups, the sequencers in
//! this crate produce an ordered sequence of groups plus per-prefix linear
//! models, so that truncating the sequence at any budget yields near-optimal
//! explained variance. The companion modules verify that claim: evaluation
//! metrics (stopping costs, timeliness, reordering oracles, accuracy,
//! NDCG), an empirical check of the greedy approximation bound, a weighted
//! group-lasso baseline, and a generalized-linear extension for
//! multi-dimensional responses.
//!
//! Candidate scoring, subset enumeration, and per-prefix evaluation are
//! data-parallel via rayon when the default `parallel` feature is enabled;
//! disabling it swaps in sequential loops with identical results.

// `!(x > 0.0)` deliberately treats NaN as invalid; the suggested `x <= 0.0`
// would silently accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod glm;
pub mod grouplasso;
pub mod linalg;
pub mod metrics;
pub mod parallel;
pub mod sequencer;
pub mod theory;

pub use dataset::{DataError, Dataset, GroupStructure};
pub use parallel::configure_threads;
pub use sequencer::{SelectionRule, SequenceError, SequencingResult};
