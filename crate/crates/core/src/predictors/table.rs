use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{tail_context, KvState, PredictError, PredictorFactory, TokenPredictor};
use crate::distribution::{Distribution, DistributionError};
use crate::vocab::{TokenId, Vocabulary};

/// Fixed lookup-table model: the next-token distribution depends only on the
/// last `order` tokens. Contexts absent from the table (including prefixes
/// shorter than `order`) use the default distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableFile", into = "TableFile")]
pub struct TableModel {
    vocab: Vocabulary,
    order: usize,
    table: HashMap<Vec<TokenId>, Distribution>,
    default: Distribution,
}

impl TableModel {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        default: Distribution,
        entries: impl IntoIterator<Item = (Vec<TokenId>, Distribution)>,
    ) -> Result<Self, PredictError> {
        let size = vocab.len();
        let check_len = |d: &Distribution| {
            if d.len() == size {
                Ok(())
            } else {
                Err(DistributionError::VocabMismatch {
                    left: d.len(),
                    right: size,
                })
            }
        };
        check_len(&default)?;
        let mut table = HashMap::new();
        for (ctx, dist) in entries {
            vocab.check(&ctx)?;
            check_len(&dist)?;
            if ctx.len() != order {
                return Err(PredictError::InvalidModel(format!(
                    "table context of length {} in an order-{order} table",
                    ctx.len()
                )));
            }
            table.insert(ctx, dist);
        }
        Ok(Self {
            vocab,
            order,
            table,
            default,
        })
    }

    /// Order-0 model that ignores its prefix entirely.
    pub fn constant(vocab: Vocabulary, dist: Distribution) -> Result<Self, PredictError> {
        Self::new(vocab, 0, dist, [])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lookup(&self, context: &[TokenId]) -> &Distribution {
        if context.len() < self.order {
            return &self.default;
        }
        let suffix = &context[context.len() - self.order..];
        self.table.get(suffix).unwrap_or(&self.default)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl PredictorFactory for TableModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn session(&self) -> Box<dyn TokenPredictor> {
        Box::new(TablePredictor::new(Arc::new(self.clone())))
    }
}

/// Session over a shared [`TableModel`].
#[derive(Debug, Clone)]
pub struct TablePredictor {
    model: Arc<TableModel>,
    cache: KvState,
}

impl TablePredictor {
    pub fn new(model: Arc<TableModel>) -> Self {
        Self {
            model,
            cache: KvState::default(),
        }
    }
}

impl TokenPredictor for TablePredictor {
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
        let ctx = tail_context(cached, uncached, self.model.order);
        Ok(self.model.lookup(&ctx).clone())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    context: Vec<String>,
    probs: Distribution,
}

/// On-disk form: contexts are written as token strings.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    order: usize,
    vocab: Vocabulary,
    default: Distribution,
    #[serde(default)]
    entries: Vec<TableEntry>,
}

impl TryFrom<TableFile> for TableModel {
    type Error = PredictError;

    fn try_from(file: TableFile) -> Result<Self, Self::Error> {
        let entries = file
            .entries
            .into_iter()
            .map(|e| {
                let ctx = file.vocab.encode(e.context.iter().map(String::as_str))?;
                Ok((ctx, e.probs))
            })
            .collect::<Result<Vec<_>, PredictError>>()?;
        TableModel::new(file.vocab, file.order, file.default, entries)
    }
}

impl From<TableModel> for TableFile {
    fn from(model: TableModel) -> Self {
        let mut entries: Vec<TableEntry> = model
            .table
            .iter()
            .map(|(ctx, probs)| TableEntry {
                context: ctx
                    .iter()
                    .map(|&t| model.vocab.token(t).unwrap_or_default().to_owned())
                    .collect(),
                probs: probs.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.context.cmp(&b.context));
        TableFile {
            order: model.order,
            vocab: model.vocab,
            default: model.default,
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Vocabulary {
        Vocabulary::new(["a", "b"]).unwrap()
    }

    fn d(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn order_zero_ignores_prefix() {
        let m = Arc::new(TableModel::constant(ab(), d(&[0.6, 0.4])).unwrap());
        let mut s = TablePredictor::new(m);
        for prefix in [vec![], vec![0], vec![1, 1, 0]] {
            let (dist, receipt) = s.predict(&prefix).unwrap();
            assert_eq!(dist.probs(), &[0.6, 0.4]);
            assert_eq!(receipt, crate::predictors::WorkReceipt::DECODE);
        }
    }

    #[test]
    fn exact_suffix_then_default() {
        let m = TableModel::new(ab(), 1, d(&[0.5, 0.5]), [(vec![0], d(&[0.1, 0.9]))]).unwrap();
        let m = Arc::new(m);
        let mut s = TablePredictor::new(m);
        assert_eq!(s.predict(&[1, 0]).unwrap().0.probs(), &[0.1, 0.9]);
        assert_eq!(s.predict(&[0, 1]).unwrap().0.probs(), &[0.5, 0.5]);
        assert_eq!(s.predict(&[]).unwrap().0.probs(), &[0.5, 0.5]);
        s.extend_cache(0, &[1, 0]).unwrap();
        assert_eq!(s.predict(&[1, 0]).unwrap().0.probs(), &[0.1, 0.9]);
    }

    #[test]
    fn json_round_trip() {
        let m = TableModel::new(ab(), 1, d(&[0.5, 0.5]), [(vec![1], d(&[0.25, 0.75]))]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: TableModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"order":0,"vocab":["a","b"],"default":[0.5,0.6]}"#;
        assert!(serde_json::from_str::<TableModel>(bad).is_err());
    }
}
