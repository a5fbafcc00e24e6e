//! Mapping heterogeneous model vocabularies onto one unified vocabulary.
//!
//! Each model's distribution is truncated to its top-k entries, renormalized
//! and scattered into the union vocabulary. Tokens are identified across
//! models by exact string equality.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{Distribution, DistributionError};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("no vocabularies to unify")]
    NoVocabularies,
    #[error("model index {0} is not registered")]
    UnknownModel(usize),
    #[error("distribution has {got} entries, model {model} vocabulary has {expected}")]
    VocabMismatch {
        model: usize,
        got: usize,
        expected: usize,
    },
    #[error("invalid top-k {0:?}: expected a positive integer or \"all\"")]
    BadTopK(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// How many of a model's highest-probability tokens survive alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopK {
    #[default]
    All,
    K(NonZeroUsize),
}

impl FromStr for TopK {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TopK::All);
        }
        s.parse::<NonZeroUsize>()
            .map(TopK::K)
            .map_err(|_| AlignError::BadTopK(s.to_owned()))
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::All => f.write_str("all"),
            TopK::K(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for TopK {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TopK::All => serializer.serialize_str("all"),
            TopK::K(k) => serializer.serialize_u64(k.get() as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TopK {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(n) => NonZeroUsize::new(n as usize)
                .map(TopK::K)
                .ok_or_else(|| serde::de::Error::custom("top_k must be at least 1")),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Alignment settings. Truncated distributions are always renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub top_k: TopK,
}

impl AlignmentConfig {
    pub fn top_k(k: usize) -> Self {
        Self {
            top_k: NonZeroUsize::new(k).map_or(TopK::All, TopK::K),
        }
    }
}

/// Union vocabulary plus per-model index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedVocabulary {
    vocab: Vocabulary,
    to_unified: Vec<Vec<TokenId>>,
    from_unified: Vec<Vec<Option<TokenId>>>,
}

impl UnifiedVocabulary {
    /// Set union of `vocabs`, ordered by first appearance.
    pub fn build(vocabs: &[&Vocabulary]) -> Result<Self, AlignError> {
        if vocabs.is_empty() {
            return Err(AlignError::NoVocabularies);
        }
        let all = vocabs.iter().flat_map(|v| v.tokens().iter().map(String::as_str));
        let vocab = Vocabulary::from_stream(all).map_err(|_| AlignError::NoVocabularies)?;
        let to_unified: Vec<Vec<TokenId>> = vocabs
            .iter()
            .map(|v| {
                v.tokens()
                    .iter()
                    .map(|t| vocab.id(t).expect("union contains every model token"))
                    .collect()
            })
            .collect();
        let from_unified = to_unified
            .iter()
            .map(|map| {
                let mut back = vec![None; vocab.len()];
                for (model_id, &u) in map.iter().enumerate() {
                    back[u] = Some(model_id);
                }
                back
            })
            .collect();
        Ok(Self {
            vocab,
            to_unified,
            from_unified,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn models(&self) -> usize {
        self.to_unified.len()
    }

    /// Model `model`'s index map into the unified vocabulary.
    pub fn map(&self, model: usize) -> Result<&[TokenId], AlignError> {
        self.to_unified
            .get(model)
            .map(Vec::as_slice)
            .ok_or(AlignError::UnknownModel(model))
    }

    /// Unified token `token` in model `model`'s vocabulary, if present there.
    pub fn to_model(&self, model: usize, token: TokenId) -> Option<TokenId> {
        self.from_unified.get(model)?.get(token).copied().flatten()
    }

    pub fn to_unified(&self, model: usize, token: TokenId) -> Option<TokenId> {
        self.to_unified.get(model)?.get(token).copied()
    }
}

/// Applies top-k truncation to `dist` (model `model`'s vocabulary),
/// renormalizes and scatters the result onto the unified vocabulary.
///
/// Ties in the top-k cut go to the lower token index.
pub fn align(
    dist: &Distribution,
    uv: &UnifiedVocabulary,
    model: usize,
    cfg: &AlignmentConfig,
) -> Result<Distribution, AlignError> {
    let map = uv.map(model)?;
    if dist.len() != map.len() {
        return Err(AlignError::VocabMismatch {
            model,
            got: dist.len(),
            expected: map.len(),
        });
    }
    let mut out = vec![0.0; uv.len()];
    match truncate(dist.probs(), cfg.top_k) {
        // nothing cut: the input is already a simplex, scatter it untouched
        None => {
            for (model_id, &p) in dist.probs().iter().enumerate() {
                out[map[model_id]] = p;
            }
            Ok(Distribution::from_validated(out))
        }
        Some(kept) => {
            for (model_id, p) in kept.into_iter().enumerate() {
                out[map[model_id]] = p;
            }
            Ok(Distribution::from_weights(&out)?)
        }
    }
}

/// Zeroes everything outside the top `k`; `None` when nothing is cut.
fn truncate(probs: &[f64], top_k: TopK) -> Option<Vec<f64>> {
    let k = match top_k {
        TopK::K(k) if k.get() < probs.len() => k.get(),
        _ => return None,
    };
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable sort keeps lower indices first among equal probabilities
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut kept = vec![0.0; probs.len()];
    for &i in &order[..k] {
        kept[i] = probs[i];
    }
    Some(kept)
}
