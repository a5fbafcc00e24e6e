use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{tail_context, KvState, PredictError, PredictorFactory, TokenPredictor, Tokenization};
use crate::distribution::Distribution;
use crate::vocab::{TokenId, VocabError, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum NGramError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus of {len} tokens is shorter than order {order}")]
    OrderTooLargeForCorpus { len: usize, order: usize },
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("smoothing must be a finite non-negative number, got {0}")]
    InvalidAlpha(f64),
    #[error("context {0:?} does not split into {1} tokens")]
    BadContext(String, usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

type Counts = BTreeMap<TokenId, u64>;

/// Additively smoothed n-gram language model:
/// `P(y | ctx) = (count(ctx, y) + α) / (Σ count(ctx, ·) + α·|V|)`.
///
/// Contexts never seen in training get the uniform distribution, which is
/// also what the formula yields for them whenever `α > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NGramFile", into = "NGramFile")]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    tokenization: Tokenization,
    counts: BTreeMap<Vec<TokenId>, Counts>,
}

impl NGramModel {
    /// Counts every window of `order` consecutive tokens in `corpus`.
    pub fn train(
        corpus: &[TokenId],
        order: usize,
        alpha: f64,
        vocab: Vocabulary,
        tokenization: Tokenization,
    ) -> Result<Self, NGramError> {
        if order == 0 {
            return Err(NGramError::ZeroOrder);
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(NGramError::InvalidAlpha(alpha));
        }
        if corpus.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        if corpus.len() < order {
            return Err(NGramError::OrderTooLargeForCorpus {
                len: corpus.len(),
                order,
            });
        }
        vocab.check(corpus)?;
        let mut counts: BTreeMap<Vec<TokenId>, Counts> = BTreeMap::new();
        for window in corpus.windows(order) {
            let (ctx, next) = window.split_at(order - 1);
            *counts.entry(ctx.to_vec()).or_default().entry(next[0]).or_default() += 1;
        }
        Ok(Self {
            order,
            alpha,
            vocab,
            tokenization,
            counts,
        })
    }

    /// Tokenizes `text`, builds the vocabulary from it unless one is given,
    /// and trains.
    pub fn train_text(
        text: &str,
        tokenization: Tokenization,
        order: usize,
        alpha: f64,
        vocab: Option<Vocabulary>,
    ) -> Result<Self, NGramError> {
        let tokens = super::tokenize(text, tokenization);
        if tokens.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::from_stream(tokens.iter().map(String::as_str))?,
        };
        let ids = vocab.encode(tokens.iter().map(String::as_str))?;
        Self::train(&ids, order, alpha, vocab, tokenization)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Distribution following the last `order - 1` tokens of `context`.
    pub fn distribution(&self, context: &[TokenId]) -> Distribution {
        let k = self.order - 1;
        let size = self.vocab.len();
        let seen = if context.len() >= k {
            self.counts.get(&context[context.len() - k..])
        } else {
            None
        };
        let Some(row) = seen else {
            return uniform(size);
        };
        let total: u64 = row.values().sum();
        let denom = total as f64 + self.alpha * size as f64;
        if denom <= 0.0 {
            return uniform(size);
        }
        let mut probs = vec![self.alpha / denom; size];
        for (&tok, &c) in row {
            probs[tok] = (c as f64 + self.alpha) / denom;
        }
        Distribution::new(probs).expect("smoothed counts form a simplex")
    }

    fn context_key(&self, ctx: &[TokenId]) -> String {
        let toks: Vec<&str> = ctx.iter().filter_map(|&t| self.vocab.token(t)).collect();
        self.tokenization.join(&toks)
    }

    fn parse_context(
        vocab: &Vocabulary,
        tokenization: Tokenization,
        key: &str,
        expected: usize,
    ) -> Result<Vec<TokenId>, NGramError> {
        let parts: Vec<String> = match (tokenization, expected) {
            (_, 0) => Vec::new(),
            (Tokenization::Char, _) => key.chars().map(String::from).collect(),
            (Tokenization::Word, _) => key.split(' ').map(String::from).collect(),
        };
        if parts.len() != expected {
            return Err(NGramError::BadContext(key.to_owned(), expected));
        }
        Ok(vocab.encode(parts.iter().map(String::as_str))?)
    }
}

fn uniform(size: usize) -> Distribution {
    Distribution::uniform(size).expect("vocabulary is non-empty")
}

impl PredictorFactory for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn session(&self) -> Box<dyn TokenPredictor> {
        Box::new(NGramPredictor::new(Arc::new(self.clone())))
    }
}

/// Session over a shared [`NGramModel`].
#[derive(Debug, Clone)]
pub struct NGramPredictor {
    model: Arc<NGramModel>,
    cache: KvState,
}

impl NGramPredictor {
    pub fn new(model: Arc<NGramModel>) -> Self {
        Self {
            model,
            cache: KvState::default(),
        }
    }
}

impl TokenPredictor for NGramPredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.model.vocab
    }

    fn cache(&self) -> &KvState {
        &self.cache
    }

    fn cache_mut(&mut self) -> &mut KvState {
        &mut self.cache
    }

    fn next_distribution(
        &mut self,
        cached: &[TokenId],
        uncached: &[TokenId],
    ) -> Result<Distribution, PredictError> {
        let ctx = tail_context(cached, uncached, self.model.order - 1);
        Ok(self.model.distribution(&ctx))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NGramFile {
    order: usize,
    alpha: f64,
    #[serde(default)]
    tokenization: Tokenization,
    vocab: Vocabulary,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl From<NGramModel> for NGramFile {
    fn from(model: NGramModel) -> Self {
        let counts = model
            .counts
            .iter()
            .map(|(ctx, row)| {
                let row = row
                    .iter()
                    .map(|(&t, &c)| (model.vocab.token(t).unwrap_or_default().to_owned(), c))
                    .collect();
                (model.context_key(ctx), row)
            })
            .collect();
        NGramFile {
            order: model.order,
            alpha: model.alpha,
            tokenization: model.tokenization,
            vocab: model.vocab,
            counts,
        }
    }
}

impl TryFrom<NGramFile> for NGramModel {
    type Error = NGramError;

    fn try_from(file: NGramFile) -> Result<Self, Self::Error> {
        if file.order == 0 {
            return Err(NGramError::ZeroOrder);
        }
        if !(file.alpha.is_finite() && file.alpha >= 0.0) {
            return Err(NGramError::InvalidAlpha(file.alpha));
        }
        let mut counts = BTreeMap::new();
        for (key, row) in &file.counts {
            let ctx = Self::parse_context(&file.vocab, file.tokenization, key, file.order - 1)?;
            let mut parsed = Counts::new();
            for (tok, &c) in row {
                let id = file
                    .vocab
                    .id(tok)
                    .ok_or_else(|| VocabError::UnknownToken(tok.clone()))?;
                parsed.insert(id, c);
            }
            counts.insert(ctx, parsed);
        }
        Ok(Self {
            order: file.order,
            alpha: file.alpha,
            vocab: file.vocab,
            tokenization: file.tokenization,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn train(text: &str, order: usize, alpha: f64) -> NGramModel {
        NGramModel::train_text(text, Tokenization::Char, order, alpha, None).unwrap()
    }

    #[test]
    fn bigram_counts_abab() {
        // contexts: 'a' twice, always followed by 'b'; 'b' once, followed by 'a'
        let m = train("abab", 2, 0.0);
        let (a, b) = (m.vocab.id("a").unwrap(), m.vocab.id("b").unwrap());
        assert_eq!(m.distribution(&[a]).prob(b), 1.0);
        assert_eq!(m.distribution(&[b]).prob(a), 1.0);
    }

    #[test]
    fn laplace_smoothing() {
        let m = train("abab", 2, 1.0);
        let (a, b) = (m.vocab.id("a").unwrap(), m.vocab.id("b").unwrap());
        assert_eq!(m.distribution(&[a]).prob(b), (2.0 + 1.0) / (2.0 + 2.0));
    }

    #[test]
    fn unigram_counts() {
        let m = train("aab", 1, 0.0);
        let d = m.distribution(&[]);
        assert!((d.prob(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.prob(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = train("abc", 3, 0.0);
        let d = m.distribution(&[2, 2]);
        assert_eq!(d.probs(), &[1.0 / 3.0; 3]);
        // shorter than the context width
        assert_eq!(m.distribution(&[0]).probs(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn training_errors() {
        let v = Vocabulary::new(["a"]).unwrap();
        assert_eq!(
            NGramModel::train(&[], 2, 0.0, v.clone(), Tokenization::Char).unwrap_err(),
            NGramError::EmptyCorpus
        );
        assert_eq!(
            NGramModel::train(&[0], 2, 0.0, v.clone(), Tokenization::Char).unwrap_err(),
            NGramError::OrderTooLargeForCorpus { len: 1, order: 2 }
        );
        assert_eq!(
            NGramModel::train(&[0], 0, 0.0, v.clone(), Tokenization::Char).unwrap_err(),
            NGramError::ZeroOrder
        );
        assert!(matches!(
            NGramModel::train(&[0], 1, -1.0, v, Tokenization::Char).unwrap_err(),
            NGramError::InvalidAlpha(_)
        ));
        assert_eq!(
            NGramModel::train_text("   ", Tokenization::Word, 1, 0.0, None).unwrap_err(),
            NGramError::EmptyCorpus
        );
    }

    #[test]
    fn predict_after_abab() {
        let m = Arc::new(train("abab", 2, 0.0));
        let mut s = NGramPredictor::new(m);
        let (d, _) = s.predict(&[1, 0]).unwrap();
        assert_eq!(d.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn json_round_trip_char_and_word() {
        let m = train("the cat sat on the mat", 3, 0.5);
        let s = serde_json::to_string(&m).unwrap();
        let back: NGramModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);

        let w = NGramModel::train_text("the cat sat on the mat", Tokenization::Word, 2, 0.0, None)
            .unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains(r#""the":{"cat":1,"mat":1}"#), "{s}");
        let back: NGramModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let s = r#"{"order":1,"alpha":0.0,"vocab":["a"],"counts":{},"extra":1}"#;
        assert!(serde_json::from_str::<NGramModel>(s).is_err());
    }

    #[test]
    fn cache_split_transparency_exhaustive() {
        let m = Arc::new(train("abracadabra cadabra abba", 3, 0.25));
        let n = m.vocab.len();
        let mut rng = crate::rng::SeededRng::new(3);
        for len in 0..=8 {
            for _ in 0..8 {
                let prefix: Vec<TokenId> =
                    (0..len).map(|_| (rng.next_u64() % n as u64) as usize).collect();
                let scratch = NGramPredictor::new(m.clone()).predict(&prefix).unwrap().0;
                let mut whole = NGramPredictor::new(m.clone());
                whole.extend_cache(0, &prefix).unwrap();
                assert_eq!(whole.predict(&prefix).unwrap().0, scratch);
                for split in 0..=len {
                    let mut s = NGramPredictor::new(m.clone());
                    s.extend_cache(0, &prefix[..split]).unwrap();
                    s.extend_cache(split, &prefix[split..]).unwrap();
                    assert_eq!(s.cached_length(), len);
                    assert_eq!(s.predict(&prefix).unwrap().0, scratch);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn every_context_normalized(
            text in "[a-e]{3,40}",
            order in 1usize..4,
            alpha in 0.0f64..2.0,
            ctx in prop::collection::vec(0usize..5, 0..4),
        ) {
            prop_assume!(text.chars().count() >= order);
            let m = train(&text, order, alpha);
            let ctx: Vec<_> = ctx.into_iter().filter(|&t| t < m.vocab.len()).collect();
            let d = m.distribution(&ctx);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn training_is_deterministic(text in "[a-c ]{2,30}") {
            let a = serde_json::to_string(&train(&text, 2, 0.1)).unwrap();
            let b = serde_json::to_string(&train(&text, 2, 0.1)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
