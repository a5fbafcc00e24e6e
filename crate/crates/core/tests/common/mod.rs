#![allow(dead_code)]

use std::sync::Arc;

use ensemble_core::decoding::{EnsembleBlueprint, EnsembleSpec};
use ensemble_core::predictors::{NGramModel, PredictorFactory, TableModel, Tokenization};
use ensemble_core::{AlignmentConfig, Distribution, EnsembleWeights, Vocabulary};

pub fn vocab(tokens: &[&str]) -> Vocabulary {
    Vocabulary::new(tokens.iter().copied()).unwrap()
}

pub fn dist(p: &[f64]) -> Distribution {
    Distribution::new(p.to_vec()).unwrap()
}

pub fn constant(tokens: &[&str], p: &[f64]) -> Arc<dyn PredictorFactory> {
    Arc::new(TableModel::constant(vocab(tokens), dist(p)).unwrap())
}

/// The order-0 pair p = [0.6, 0.4], q = [0.2, 0.8] over {a, b}.
pub fn table_pair(lambda: f64) -> EnsembleBlueprint {
    EnsembleBlueprint::new(
        vec![constant(&["a", "b"], &[0.6, 0.4]), constant(&["a", "b"], &[0.2, 0.8])],
        EnsembleWeights::new(vec![lambda, 1.0 - lambda]).unwrap(),
        AlignmentConfig::default(),
    )
    .unwrap()
}

/// `n` distinct order-0 models over {a, b, c} with uniform weights.
pub fn table_ensemble(n: usize) -> EnsembleBlueprint {
    let rows = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]];
    EnsembleBlueprint::new(
        rows[..n].iter().map(|r| constant(&["a", "b", "c"], r)).collect(),
        EnsembleWeights::uniform(n).unwrap(),
        AlignmentConfig::default(),
    )
    .unwrap()
}

pub const CORPUS_A: &str = "the cat sat on the mat and the dog sat on the log while the cat ran to the dog";
pub const CORPUS_B: &str = "a dog and a cat met at the gate then the cat sang and the dog danced on a mat";

/// Shared character vocabulary over both corpora.
pub fn shared_char_vocab() -> Vocabulary {
    let text = format!("{CORPUS_A}{CORPUS_B}");
    Vocabulary::from_stream(text.chars().map(|c| &*Box::leak(c.to_string().into_boxed_str()))).unwrap()
}

pub fn ngram_pair(order: usize, alpha: f64, lambda: f64) -> EnsembleBlueprint {
    let v = shared_char_vocab();
    let a = NGramModel::train_text(CORPUS_A, Tokenization::Char, order, alpha, Some(v.clone())).unwrap();
    let b = NGramModel::train_text(CORPUS_B, Tokenization::Char, order, alpha, Some(v)).unwrap();
    EnsembleBlueprint::new(
        vec![Arc::new(a), Arc::new(b)],
        EnsembleWeights::new(vec![lambda, 1.0 - lambda]).unwrap(),
        AlignmentConfig::default(),
    )
    .unwrap()
}

pub fn spec(bp: &EnsembleBlueprint) -> EnsembleSpec {
    bp.spec().unwrap()
}
