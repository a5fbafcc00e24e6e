use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Index of a token inside a particular [`Vocabulary`].
pub type TokenId = usize;

/// A running token sequence. Indices refer to whichever vocabulary the owner
/// of the sequence works in (a model vocabulary or the unified one).
pub type TokenSequence = Vec<TokenId>;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary must contain at least one token")]
    Empty,
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token index {index} out of range for vocabulary of size {size}")]
    OutOfRange { index: TokenId, size: usize },
}

/// Ordered set of token strings with a bijective index lookup.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Vocabulary of the distinct tokens in `stream`, ordered by first appearance.
    pub fn from_stream<'a, I>(stream: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = HashMap::new();
        let mut tokens = Vec::new();
        for t in stream {
            if !seen.contains_key(t) {
                seen.insert(t.to_owned(), tokens.len());
                tokens.push(t.to_owned());
            }
        }
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<'a, I>(&self, tokens: I) -> Result<TokenSequence, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        tokens
            .into_iter()
            .map(|t| self.id(t).ok_or_else(|| VocabError::UnknownToken(t.to_owned())))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<&str>, VocabError> {
        ids.iter()
            .map(|&i| {
                self.token(i).ok_or(VocabError::OutOfRange {
                    index: i,
                    size: self.len(),
                })
            })
            .collect()
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), VocabError> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(&index) => Err(VocabError::OutOfRange {
                index,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Vocabulary").field(&self.tokens).finish()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}
