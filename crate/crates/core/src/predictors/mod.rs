//! Token predictors: the model interface the ensembles decode from.
//!
//! A predictor session owns a [`KvState`], the abstract stand-in for a
//! transformer KV cache. The cache only ever records which prefix the session
//! has already processed; [`TokenPredictor::predict`] must return the same
//! distribution whether the prefix was cached or not.

use std::ops::AddAssign;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{Distribution, DistributionError};
use crate::vocab::{TokenId, VocabError, Vocabulary};

mod corpus;
mod ngram;
mod remote;
mod table;

pub use corpus::{tokenize, Tokenization};
pub use ngram::{NGramError, NGramModel, NGramPredictor};
pub use remote::{complete_logprobs, RemoteConfig, RemoteFactory, RemotePredictor};
pub use table::{TableModel, TablePredictor};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("prefix does not extend cached content at position {position}")]
    CacheDesync { position: usize },
    #[error("segment starts at {start} but cache holds {cached} tokens")]
    Gap { start: usize, cached: usize },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("remote predictor: {0}")]
    Remote(String),
    #[error("remote predictor timed out after {attempts} attempts")]
    RemoteTimeout { attempts: u32 },
}

/// Work performed by predictor calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkReceipt {
    /// Next-token computations, one per `predict`.
    pub decode_forwards: u64,
    /// Tokens pushed through a forward extend without being sampled.
    pub prefill_tokens: u64,
}

impl WorkReceipt {
    pub const DECODE: WorkReceipt = WorkReceipt {
        decode_forwards: 1,
        prefill_tokens: 0,
    };

    pub fn prefill(tokens: usize) -> Self {
        Self {
            decode_forwards: 0,
            prefill_tokens: tokens as u64,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.decode_forwards == 0 && self.prefill_tokens == 0
    }
}

impl AddAssign for WorkReceipt {
    fn add_assign(&mut self, rhs: Self) {
        self.decode_forwards += rhs.decode_forwards;
        self.prefill_tokens += rhs.prefill_tokens;
    }
}

impl std::ops::Add for WorkReceipt {
    type Output = WorkReceipt;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for WorkReceipt {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(WorkReceipt::default(), |a, b| a + b)
    }
}

/// Number of trailing cache positions compared against each prefix.
pub const DESYNC_WINDOW: usize = 256;

/// Per-session cache contents, in model-vocabulary indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvState {
    tokens: Vec<TokenId>,
}

impl KvState {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Verifies that `prefix` starts with the cached tokens. Only the last
    /// [`DESYNC_WINDOW`] cached positions are compared, which keeps a decode
    /// step O(1) in the sequence length.
    pub fn check_extends(&self, prefix: &[TokenId]) -> Result<(), PredictError> {
        let len = self.tokens.len();
        if prefix.len() < len {
            return Err(PredictError::CacheDesync {
                position: prefix.len(),
            });
        }
        let from = len.saturating_sub(DESYNC_WINDOW);
        match self.tokens[from..]
            .iter()
            .zip(&prefix[from..len])
            .position(|(a, b)| a != b)
        {
            Some(offset) => Err(PredictError::CacheDesync {
                position: from + offset,
            }),
            None => Ok(()),
        }
    }

    fn append(&mut self, start: usize, segment: &[TokenId]) -> Result<(), PredictError> {
        if start != self.tokens.len() {
            return Err(PredictError::Gap {
                start,
                cached: self.tokens.len(),
            });
        }
        self.tokens.extend_from_slice(segment);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.tokens.clear();
    }
}

/// The last `k` tokens of `cached ‖ uncached`, or all of them if shorter.
pub(crate) fn tail_context(cached: &[TokenId], uncached: &[TokenId], k: usize) -> Vec<TokenId> {
    let from_uncached = uncached.len().min(k);
    let from_cached = (k - from_uncached).min(cached.len());
    let mut ctx = Vec::with_capacity(from_cached + from_uncached);
    ctx.extend_from_slice(&cached[cached.len() - from_cached..]);
    ctx.extend_from_slice(&uncached[uncached.len() - from_uncached..]);
    ctx
}

/// A next-token model bound to one generation session.
pub trait TokenPredictor: Send {
    fn vocab(&self) -> &Vocabulary;

    fn cache(&self) -> &KvState;

    fn cache_mut(&mut self) -> &mut KvState;

    /// Next-token distribution for `context`. `cached` is the prefix of
    /// `context` already in the session cache; implementations may use it
    /// but the result must not depend on where the split falls.
    fn next_distribution(
        &mut self,
        cached: &[TokenId],
        uncached: &[TokenId],
    ) -> Result<Distribution, PredictError>;

    fn cached_length(&self) -> usize {
        self.cache().len()
    }

    /// One decode forward over `prefix`, which must extend the cache.
    fn predict(&mut self, prefix: &[TokenId]) -> Result<(Distribution, WorkReceipt), PredictError> {
        self.cache().check_extends(prefix)?;
        self.vocab().check(&prefix[self.cached_length()..])?;
        let (cached, uncached) = prefix.split_at(self.cached_length());
        let dist = self.next_distribution(cached, uncached)?;
        if dist.len() != self.vocab().len() {
            return Err(DistributionError::VocabMismatch {
                left: dist.len(),
                right: self.vocab().len(),
            }
            .into());
        }
        Ok((dist, WorkReceipt::DECODE))
    }

    /// Forward extend: processes `segment` into the cache starting at
    /// position `start`, which must equal the current cached length.
    fn extend_cache(&mut self, start: usize, segment: &[TokenId]) -> Result<WorkReceipt, PredictError> {
        self.vocab().check(segment)?;
        self.cache_mut().append(start, segment)?;
        Ok(WorkReceipt::prefill(segment.len()))
    }

    /// Records the token sampled from this model's own decode forward. Its
    /// cache entry is produced by the forward that consumes it next, which is
    /// already charged as a decode, so no work is reported.
    fn absorb(&mut self, start: usize, token: TokenId) -> Result<(), PredictError> {
        self.vocab().check(&[token])?;
        self.cache_mut().append(start, &[token])
    }

    /// Drops all session state.
    fn reset(&mut self) {
        self.cache_mut().clear();
    }
}

/// Immutable model parameters that can open any number of sessions.
pub trait PredictorFactory: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn session(&self) -> Box<dyn TokenPredictor>;
}

impl<T: PredictorFactory + ?Sized> PredictorFactory for Arc<T> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn session(&self) -> Box<dyn TokenPredictor> {
        (**self).session()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Box<dyn TokenPredictor> {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        let model = NGramModel::train_text("abcabcaab", Tokenization::Char, 2, 0.5, Some(vocab)).unwrap();
        model.session()
    }

    #[test]
    fn empty_extension_is_noop() {
        let mut s = session();
        assert_eq!(s.extend_cache(0, &[]).unwrap(), WorkReceipt::default());
        assert_eq!(s.cached_length(), 0);
    }

    #[test]
    fn extension_bookkeeping() {
        let mut s = session();
        assert_eq!(s.extend_cache(0, &[0, 1, 2, 0, 1]).unwrap(), WorkReceipt::prefill(5));
        let r = s.extend_cache(5, &[2, 0, 1, 2]).unwrap();
        assert_eq!(s.cached_length(), 9);
        assert_eq!(r, WorkReceipt { decode_forwards: 0, prefill_tokens: 4 });
    }

    #[test]
    fn gap_and_desync_errors() {
        let mut s = session();
        s.extend_cache(0, &[0, 1]).unwrap();
        assert!(matches!(
            s.extend_cache(3, &[0]),
            Err(PredictError::Gap { start: 3, cached: 2 })
        ));
        assert!(matches!(
            s.predict(&[0, 2, 1]),
            Err(PredictError::CacheDesync { position: 1 })
        ));
        assert!(matches!(s.predict(&[0]), Err(PredictError::CacheDesync { .. })));
        assert!(matches!(s.predict(&[0, 1, 7]), Err(PredictError::Vocab(_))));
    }

    #[test]
    fn absorb_is_free_and_cached_length_monotone() {
        let mut s = session();
        let mut last = 0;
        let mut total = WorkReceipt::default();
        let mut seq = Vec::new();
        for t in [0, 1, 2, 2, 1] {
            let (_, r) = s.predict(&seq).unwrap();
            total += r;
            s.absorb(seq.len(), t).unwrap();
            seq.push(t);
            assert!(s.cached_length() > last);
            last = s.cached_length();
        }
        assert_eq!(total, WorkReceipt { decode_forwards: 5, prefill_tokens: 0 });
        s.reset();
        assert_eq!(s.cached_length(), 0);
    }

    #[test]
    fn receipts_add_up() {
        let parts = [WorkReceipt::DECODE, WorkReceipt::prefill(3), WorkReceipt::prefill(2), WorkReceipt::DECODE];
        let sum: WorkReceipt = parts.iter().copied().sum();
        assert_eq!(sum, WorkReceipt { decode_forwards: 2, prefill_tokens: 5 });
    }

    #[test]
    fn tail_context_spans_split() {
        assert_eq!(tail_context(&[1, 2, 3], &[4], 2), vec![3, 4]);
        assert_eq!(tail_context(&[1], &[], 3), vec![1]);
        assert_eq!(tail_context(&[], &[5, 6, 7], 2), vec![6, 7]);
        assert!(tail_context(&[1, 2], &[3], 0).is_empty());
    }
}
