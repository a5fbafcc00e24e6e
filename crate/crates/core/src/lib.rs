//! Ensemble decoding for autoregressive token predictors.
//!
//! Two ways of decoding from a weighted ensemble are provided:
//!
//! * the conventional ensemble (CE), which evaluates every model, averages the
//!   aligned next-token distributions with the ensemble weights and samples
//!   from the average;
//! * the mixture-model-like ensemble (ME), which first draws a single model
//!   index from the weights and then samples from that model alone.
//!
//! Both produce the same token distribution, but ME runs one decode forward
//! per emitted token instead of one per model. Models that are skipped fall
//! behind; their caches are brought up to date lazily the next time they are
//! selected (see [`decoding::KvLedger`]).
//!
//! Supporting modules cover vocabulary alignment for heterogeneous models,
//! the mixture decomposition `C = (1 - λ)·C' + λ·p` for general combined
//! distributions, simulated latency accounting, and the statistical harness
//! that checks CE and ME against each other.

pub mod alignment;
pub mod decoding;
pub mod distribution;
pub mod harness;
pub mod mixture;
pub mod predictors;
pub mod rng;
pub mod vocab;

pub use alignment::{AlignmentConfig, TopK, UnifiedVocabulary};
pub use distribution::{
    normalize, sample_index, sample_token, tv_distance, Distribution, DistributionError,
    EnsembleWeights, PROB_TOLERANCE,
};
pub use rng::SeededRng;
pub use vocab::{TokenId, TokenSequence, Vocabulary};
