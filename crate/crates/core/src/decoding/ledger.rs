use crate::vocab::TokenId;

/// Per-model record of how much of the shared sequence each model's cache
/// has seen.
///
/// Entry `i` holds the synced prefix already translated into model `i`'s
/// vocabulary, so its length is the model's synced length. A model that is
/// not selected for a while falls behind; the difference to the sequence
/// length is the gap that the next forward extend has to fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvLedger {
    synced: Vec<Vec<TokenId>>,
}

impl KvLedger {
    pub fn new(models: usize) -> Self {
        Self {
            synced: vec![Vec::new(); models],
        }
    }

    pub fn models(&self) -> usize {
        self.synced.len()
    }

    pub fn synced_length(&self, model: usize) -> usize {
        self.synced[model].len()
    }

    pub fn synced_lengths(&self) -> Vec<usize> {
        self.synced.iter().map(Vec::len).collect()
    }

    /// Model `model`'s view of the synced prefix.
    pub fn model_tokens(&self, model: usize) -> &[TokenId] {
        &self.synced[model]
    }

    pub(crate) fn push(&mut self, model: usize, tokens: &[TokenId]) {
        self.synced[model].extend_from_slice(tokens);
    }

    pub fn gap(&self, model: usize, sequence_len: usize) -> usize {
        sequence_len.saturating_sub(self.synced_length(model))
    }
}
