//! Simulated wall-clock cost of a generation trace.
//!
//! Decoding is memory-bandwidth bound: one forward pass costs about the same
//! whether it processes one position or a few hundred. The model therefore
//! prices forward passes in chunks of up to `max_chunk` positions rather
//! than per token.

use serde::{Deserialize, Serialize};

use super::trace::GenerationTrace;
use crate::predictors::WorkReceipt;

/// How a forward extend relates to the decode forward that follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtendCost {
    /// The missing tokens ride along in the same pass that produces the next
    /// distribution; only chunks beyond the first cost extra.
    #[default]
    Fused,
    /// The extend is its own pass, charged in full before the decode.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub decode_ms: f64,
    pub prefill_chunk_ms: f64,
    pub max_chunk: usize,
    #[serde(default)]
    pub extend: ExtendCost,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            decode_ms: 10.0,
            prefill_chunk_ms: 10.0,
            max_chunk: 512,
            extend: ExtendCost::Fused,
        }
    }
}

impl LatencyModel {
    fn chunks(&self, tokens: u64) -> u64 {
        tokens.div_ceil(self.max_chunk.max(1) as u64)
    }

    /// Cost of one model's work within one step.
    pub fn step_cost(&self, work: &WorkReceipt) -> f64 {
        let chunks = self.chunks(work.prefill_tokens) as f64;
        let decodes = work.decode_forwards as f64;
        match self.extend {
            ExtendCost::Separate => decodes * self.decode_ms + chunks * self.prefill_chunk_ms,
            ExtendCost::Fused if work.decode_forwards == 0 || chunks == 0.0 => {
                decodes * self.decode_ms + chunks * self.prefill_chunk_ms
            }
            ExtendCost::Fused => decodes * self.decode_ms + (chunks - 1.0) * self.prefill_chunk_ms,
        }
    }

    /// Time sequential CE would need for the same run: every model decodes
    /// every step and prefills the prompt on the first one.
    pub fn ce_sequential_ms(&self, models: usize, prompt_len: usize, tokens: usize) -> f64 {
        if tokens == 0 {
            return 0.0;
        }
        let first = self.step_cost(&WorkReceipt {
            decode_forwards: 1,
            prefill_tokens: prompt_len as u64,
        });
        let rest = self.step_cost(&WorkReceipt::DECODE) * (tokens - 1) as f64;
        models as f64 * (first + rest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub decode_ms: f64,
    pub total_ms: f64,
    pub tokens_per_sec: f64,
    pub ce_sequential_ms: f64,
    pub speedup_vs_ce: f64,
}

pub fn simulate_latency(trace: &GenerationTrace, model: &LatencyModel) -> LatencyReport {
    let total_ms: f64 = trace
        .steps
        .iter()
        .flat_map(|s| s.per_model.iter())
        .map(|w| model.step_cost(w))
        .sum();
    let tokens = trace.tokens.len();
    let ce_ms = model.ce_sequential_ms(trace.models, trace.prompt.len(), tokens);
    let per_sec = |ms: f64| if ms > 0.0 { tokens as f64 * 1000.0 / ms } else { 0.0 };
    LatencyReport {
        decode_ms: model.decode_ms,
        total_ms,
        tokens_per_sec: per_sec(total_ms),
        ce_sequential_ms: ce_ms,
        speedup_vs_ce: if total_ms > 0.0 { ce_ms / total_ms } else { 0.0 },
    }
}
