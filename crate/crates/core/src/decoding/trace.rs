use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::latency::LatencyReport;
use crate::predictors::WorkReceipt;
use crate::vocab::TokenId;

/// Which decoding strategy produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "model")]
pub enum Strategy {
    /// Decode from one model only.
    Single(usize),
    /// Conventional ensemble: average every model, then sample.
    Ce,
    /// Mixture-model-like ensemble: pick a model by weight, then sample.
    Me,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Single(_) => "single",
            Strategy::Ce => "ce",
            Strategy::Me => "me",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    MaxTokens,
    Stop,
    /// Generation was cut short by an error; see the accompanying failure.
    Error,
}

/// One emitted token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub strategy: String,
    /// `None` for CE, where every model is evaluated.
    pub selected_model: Option<usize>,
    pub token: TokenId,
    pub token_text: String,
    pub decode_forwards: u64,
    pub prefill_tokens: u64,
    pub per_model: Vec<WorkReceipt>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTotals {
    pub decode_forwards: u64,
    pub prefill_tokens: u64,
    pub selections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub strategy: Strategy,
    pub models: usize,
    pub prompt: Vec<TokenId>,
    /// Emitted tokens, in unified-vocabulary indices.
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    pub per_model: Vec<ModelTotals>,
    pub finish: FinishReason,
}

impl GenerationTrace {
    pub(crate) fn new(strategy: Strategy, models: usize, prompt: Vec<TokenId>) -> Self {
        Self {
            strategy,
            models,
            prompt,
            tokens: Vec::new(),
            steps: Vec::new(),
            per_model: vec![ModelTotals::default(); models],
            finish: FinishReason::MaxTokens,
        }
    }

    pub(crate) fn record(&mut self, record: StepRecord) {
        for (totals, work) in self.per_model.iter_mut().zip(&record.per_model) {
            totals.decode_forwards += work.decode_forwards;
            totals.prefill_tokens += work.prefill_tokens;
        }
        if let Some(i) = record.selected_model {
            self.per_model[i].selections += 1;
        } else {
            for totals in &mut self.per_model {
                totals.selections += 1;
            }
        }
        self.tokens.push(record.token);
        self.steps.push(record);
    }

    pub fn total(&self) -> WorkReceipt {
        self.per_model
            .iter()
            .map(|t| WorkReceipt {
                decode_forwards: t.decode_forwards,
                prefill_tokens: t.prefill_tokens,
            })
            .sum()
    }

    /// Writes one JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn summary(&self, simulated: LatencyReport) -> Summary {
        Summary {
            strategy: self.strategy.name().to_owned(),
            tokens: self.tokens.len(),
            finish: self.finish,
            decode_forwards: self.total().decode_forwards,
            prefill_tokens: self.total().prefill_tokens,
            per_model: self.per_model.clone(),
            simulated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub tokens: usize,
    pub finish: FinishReason,
    pub decode_forwards: u64,
    pub prefill_tokens: u64,
    pub per_model: Vec<ModelTotals>,
    pub simulated: LatencyReport,
}
