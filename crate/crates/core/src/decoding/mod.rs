//! Conventional (CE) and mixture-model-like (ME) ensemble decoding.
//!
//! Both strategies keep a [`KvLedger`] of how far each model's cache has
//! been synced. A model is only brought up to date when it is about to be
//! evaluated: CE evaluates every model each step, so its gaps stay at zero
//! after the prompt; ME evaluates one model per step, and a model returning
//! after `k` skipped steps first runs a forward extend over the `k` tokens
//! it missed.

use std::collections::HashSet;

use thiserror::Error;

use crate::alignment::{align, AlignError, AlignmentConfig, UnifiedVocabulary};
use crate::distribution::{sample_index, sample_token, Distribution, DistributionError, EnsembleWeights};
use crate::predictors::{PredictError, PredictorFactory, TokenPredictor, WorkReceipt};
use crate::rng::SeededRng;
use crate::vocab::{TokenId, VocabError};

mod latency;
mod ledger;
mod trace;

pub use latency::{simulate_latency, ExtendCost, LatencyModel, LatencyReport};
pub use ledger::KvLedger;
pub use trace::{FinishReason, GenerationTrace, ModelTotals, StepRecord, Strategy, Summary};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("{models} models but {weights} ensemble weights")]
    WeightCount { models: usize, weights: usize },
    #[error("an ensemble needs at least one model")]
    NoModels,
    #[error("strategy single({0}) names a model that does not exist")]
    NoSuchModel(usize),
    #[error("max_new_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error(
        "greedy decoding is not available for the mixture-model-like ensemble: \
         selecting a model and then taking its argmax does not match the argmax of the \
         averaged distribution"
    )]
    GreedyUnderMixture,
    #[error("prompt token {token:?} is not in the vocabulary of model {model}")]
    PromptNotRepresentable { model: usize, token: String },
    #[error("token {token:?} emitted at step {step} is not in the vocabulary of model {model}")]
    TokenNotInModelVocab {
        model: usize,
        step: usize,
        token: String,
    },
    #[error("ledger for model {model} records {synced} tokens but the sequence has {len}")]
    LedgerCorrupt {
        model: usize,
        synced: usize,
        len: usize,
    },
    #[error("model {model}: {source}")]
    Predict {
        model: usize,
        #[source]
        source: PredictError,
    },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Models, weights and the shared vocabulary for one generation session.
pub struct EnsembleSpec {
    models: Vec<Box<dyn TokenPredictor>>,
    weights: EnsembleWeights,
    unified: UnifiedVocabulary,
    alignment: AlignmentConfig,
}

impl EnsembleSpec {
    pub fn new(
        models: Vec<Box<dyn TokenPredictor>>,
        weights: EnsembleWeights,
        alignment: AlignmentConfig,
    ) -> Result<Self, DecodeError> {
        if models.is_empty() {
            return Err(DecodeError::NoModels);
        }
        if models.len() != weights.len() {
            return Err(DecodeError::WeightCount {
                models: models.len(),
                weights: weights.len(),
            });
        }
        let vocabs: Vec<_> = models.iter().map(|m| m.vocab()).collect();
        let unified = UnifiedVocabulary::build(&vocabs)?;
        Ok(Self {
            models,
            weights,
            unified,
            alignment,
        })
    }

    /// Opens a fresh session on each factory.
    pub fn from_factories<F: PredictorFactory + ?Sized>(
        factories: &[&F],
        weights: EnsembleWeights,
        alignment: AlignmentConfig,
    ) -> Result<Self, DecodeError> {
        Self::new(factories.iter().map(|f| f.session()).collect(), weights, alignment)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn weights(&self) -> &EnsembleWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: EnsembleWeights) -> Result<(), DecodeError> {
        if weights.len() != self.models.len() {
            return Err(DecodeError::WeightCount {
                models: self.models.len(),
                weights: weights.len(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    pub fn unified(&self) -> &UnifiedVocabulary {
        &self.unified
    }

    pub fn alignment(&self) -> &AlignmentConfig {
        &self.alignment
    }

    pub fn model(&self, i: usize) -> &dyn TokenPredictor {
        self.models[i].as_ref()
    }

    /// Clears every model's session cache.
    pub fn reset(&mut self) {
        for m in &mut self.models {
            m.reset();
        }
    }

    fn translate(&self, model: usize, tokens: &[TokenId], offset: usize) -> Result<Vec<TokenId>, DecodeError> {
        tokens
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                self.unified.to_model(model, t).ok_or_else(|| DecodeError::TokenNotInModelVocab {
                    model,
                    step: offset + k,
                    token: self.unified.vocab().token(t).unwrap_or("?").to_owned(),
                })
            })
            .collect()
    }

    /// Lazy sync, one decode forward and alignment for model `i`.
    fn evaluate(
        &mut self,
        i: usize,
        seq: &[TokenId],
        ledger: &mut KvLedger,
    ) -> Result<(Distribution, WorkReceipt), DecodeError> {
        let mut work = lazy_sync(i, self, seq, ledger)?;
        let (dist, decode) = self.models[i]
            .predict(ledger.model_tokens(i))
            .map_err(|source| DecodeError::Predict { model: i, source })?;
        work += decode;
        let aligned = align(&dist, &self.unified, i, &self.alignment)?;
        Ok((aligned, work))
    }
}

/// Brings model `i`'s cache up to the end of `seq` with one forward extend
/// over the tokens it has not seen.
pub fn lazy_sync(
    i: usize,
    spec: &mut EnsembleSpec,
    seq: &[TokenId],
    ledger: &mut KvLedger,
) -> Result<WorkReceipt, DecodeError> {
    let synced = ledger.synced_length(i);
    if synced > seq.len() || spec.models[i].cached_length() != synced {
        return Err(DecodeError::LedgerCorrupt {
            model: i,
            synced,
            len: seq.len(),
        });
    }
    if synced == seq.len() {
        return Ok(WorkReceipt::default());
    }
    let missing = spec.translate(i, &seq[synced..], synced)?;
    let receipt = spec.models[i]
        .extend_cache(synced, &missing)
        .map_err(|source| DecodeError::Predict { model: i, source })?;
    ledger.push(i, &missing);
    Ok(receipt)
}

/// Result of one CE step.
#[derive(Debug, Clone, PartialEq)]
pub struct CeStep {
    /// `Σ λᵢ·P̃ᵢ` over the unified vocabulary.
    pub dist: Distribution,
    pub per_model: Vec<WorkReceipt>,
}

/// Evaluates every model at `seq` and returns the weighted average of the
/// aligned distributions.
pub fn ce_step(spec: &mut EnsembleSpec, seq: &[TokenId], ledger: &mut KvLedger) -> Result<CeStep, DecodeError> {
    let mut acc = vec![0.0; spec.unified.len()];
    let mut per_model = Vec::with_capacity(spec.len());
    for i in 0..spec.len() {
        let (aligned, work) = spec.evaluate(i, seq, ledger)?;
        let w = spec.weights.lambdas()[i];
        for (a, p) in acc.iter_mut().zip(aligned.probs()) {
            *a += w * p;
        }
        per_model.push(work);
    }
    Ok(CeStep {
        dist: Distribution::new(acc)?,
        per_model,
    })
}

/// Picks the model that produces the next token.
pub trait TokenRouter {
    fn route(&mut self, seq: &[TokenId], rng: &mut SeededRng) -> usize;
}

/// Router that ignores its input and draws a model from the weights. Routing
/// with it is exactly the mixture-model-like ensemble.
#[derive(Debug, Clone, Copy)]
pub struct RandomRouter<'a> {
    weights: &'a EnsembleWeights,
}

impl<'a> RandomRouter<'a> {
    pub fn new(weights: &'a EnsembleWeights) -> Self {
        Self { weights }
    }
}

impl TokenRouter for RandomRouter<'_> {
    fn route(&mut self, _seq: &[TokenId], rng: &mut SeededRng) -> usize {
        sample_index(self.weights, rng)
    }
}

/// Result of one routed (ME) step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeStep {
    pub token: TokenId,
    pub model: usize,
    /// The selected model's aligned distribution the token was drawn from.
    pub dist: Distribution,
    pub per_model: Vec<WorkReceipt>,
}

/// Routes to one model, syncs it, and samples the next token from it alone.
pub fn routed_step<R: TokenRouter + ?Sized>(
    spec: &mut EnsembleSpec,
    router: &mut R,
    seq: &[TokenId],
    ledger: &mut KvLedger,
    rng: &mut SeededRng,
) -> Result<MeStep, DecodeError> {
    let model = router.route(seq, rng);
    if model >= spec.len() {
        return Err(DecodeError::NoSuchModel(model));
    }
    let (aligned, work) = spec.evaluate(model, seq, ledger)?;
    let token = sample_token(&aligned, rng);
    let mut per_model = vec![WorkReceipt::default(); spec.len()];
    per_model[model] = work;
    Ok(MeStep {
        token,
        model,
        dist: aligned,
        per_model,
    })
}

/// One ME step: `i ~ Multinomial(λ)`, then `token ~ P̃ᵢ`.
pub fn me_step(
    spec: &mut EnsembleSpec,
    seq: &[TokenId],
    ledger: &mut KvLedger,
    rng: &mut SeededRng,
) -> Result<MeStep, DecodeError> {
    let weights = spec.weights.clone();
    routed_step(spec, &mut RandomRouter::new(&weights), seq, ledger, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    /// Unified-vocabulary tokens that end generation once emitted.
    pub stop: HashSet<TokenId>,
    pub seed: u64,
    pub strategy: Strategy,
    /// Take the argmax instead of sampling. Rejected for ME.
    pub greedy: bool,
}

impl GenerationConfig {
    pub fn new(strategy: Strategy, max_new_tokens: usize, seed: u64) -> Self {
        Self {
            max_new_tokens,
            stop: HashSet::new(),
            seed,
            strategy,
            greedy: false,
        }
    }
}

/// Appends `token` to `seq`. The models in `evaluated` have just run a decode
/// forward over all of `seq`; the new token enters their caches through their
/// own next forward, so their ledger entries advance without a prefill.
pub fn commit_token(
    spec: &mut EnsembleSpec,
    seq: &mut Vec<TokenId>,
    ledger: &mut KvLedger,
    token: TokenId,
    evaluated: &[usize],
) -> Result<(), DecodeError> {
    for &i in evaluated {
        let local = spec.translate(i, &[token], seq.len())?[0];
        spec.models[i]
            .absorb(seq.len(), local)
            .map_err(|source| DecodeError::Predict { model: i, source })?;
        ledger.push(i, &[local]);
    }
    seq.push(token);
    Ok(())
}

/// Generation stopped on an error; the trace holds every completed step.
#[derive(Debug, Error)]
#[error("generation failed after {} tokens: {error}", trace.tokens.len())]
pub struct GenerationFailure {
    pub trace: Box<GenerationTrace>,
    #[source]
    pub error: DecodeError,
}

fn validate(spec: &EnsembleSpec, prompt: &[TokenId], cfg: &GenerationConfig) -> Result<(), DecodeError> {
    if cfg.max_new_tokens == 0 {
        return Err(DecodeError::ZeroMaxTokens);
    }
    match cfg.strategy {
        Strategy::Me if cfg.greedy => return Err(DecodeError::GreedyUnderMixture),
        Strategy::Single(i) if i >= spec.len() => return Err(DecodeError::NoSuchModel(i)),
        _ => {}
    }
    spec.unified.vocab().check(prompt)?;
    for model in 0..spec.len() {
        if let Some(&t) = prompt.iter().find(|&&t| spec.unified.to_model(model, t).is_none()) {
            return Err(DecodeError::PromptNotRepresentable {
                model,
                token: spec.unified.vocab().token(t).unwrap_or("?").to_owned(),
            });
        }
    }
    Ok(())
}

/// Runs a full generation session from a clean cache state.
pub fn generate(
    spec: &mut EnsembleSpec,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<GenerationTrace, GenerationFailure> {
    let mut trace = GenerationTrace::new(cfg.strategy, spec.len(), prompt.to_vec());
    match run(spec, prompt, cfg, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => {
            trace.finish = FinishReason::Error;
            Err(GenerationFailure {
                trace: Box::new(trace),
                error,
            })
        }
    }
}

fn run(
    spec: &mut EnsembleSpec,
    prompt: &[TokenId],
    cfg: &GenerationConfig,
    trace: &mut GenerationTrace,
) -> Result<(), DecodeError> {
    validate(spec, prompt, cfg)?;
    spec.reset();
    let n = spec.len();
    let mut ledger = KvLedger::new(n);
    let mut rng = SeededRng::new(cfg.seed);
    let mut seq = prompt.to_vec();
    let routing_weights = match cfg.strategy {
        Strategy::Single(i) => Some(EnsembleWeights::one_hot(n, i)?),
        Strategy::Me => Some(spec.weights.clone()),
        Strategy::Ce => None,
    };

    for step in 0..cfg.max_new_tokens {
        let (token, selected, per_model) = match &routing_weights {
            None => {
                let out = ce_step(spec, &seq, &mut ledger)?;
                let token = if cfg.greedy {
                    out.dist.argmax()
                } else {
                    sample_token(&out.dist, &mut rng)
                };
                (token, None, out.per_model)
            }
            Some(weights) => {
                let mut router = RandomRouter::new(weights);
                let out = routed_step(spec, &mut router, &seq, &mut ledger, &mut rng)?;
                // ME greedy was rejected in validate, so this is single-model greedy
                let token = if cfg.greedy { out.dist.argmax() } else { out.token };
                (token, Some(out.model), out.per_model)
            }
        };

        let evaluated: Vec<usize> = match selected {
            Some(i) => vec![i],
            None => (0..n).collect(),
        };
        commit_token(spec, &mut seq, &mut ledger, token, &evaluated)?;

        let total: WorkReceipt = per_model.iter().copied().sum();
        trace.record(StepRecord {
            step,
            strategy: cfg.strategy.name().to_owned(),
            selected_model: selected,
            token,
            token_text: spec.unified.vocab().token(token).unwrap_or_default().to_owned(),
            decode_forwards: total.decode_forwards,
            prefill_tokens: total.prefill_tokens,
            per_model,
        });
        if cfg.stop.contains(&token) {
            trace.finish = FinishReason::Stop;
            return Ok(());
        }
    }
    trace.finish = FinishReason::MaxTokens;
    Ok(())
}

/// Shared model parameters from which independent sessions are opened.
#[derive(Clone)]
pub struct EnsembleBlueprint {
    pub factories: Vec<std::sync::Arc<dyn PredictorFactory>>,
    pub weights: EnsembleWeights,
    pub alignment: AlignmentConfig,
}

impl EnsembleBlueprint {
    pub fn new(
        factories: Vec<std::sync::Arc<dyn PredictorFactory>>,
        weights: EnsembleWeights,
        alignment: AlignmentConfig,
    ) -> Result<Self, DecodeError> {
        let blueprint = Self {
            factories,
            weights,
            alignment,
        };
        // surfaces count and vocabulary errors up front
        blueprint.spec()?;
        Ok(blueprint)
    }

    pub fn spec(&self) -> Result<EnsembleSpec, DecodeError> {
        self.spec_with(self.weights.clone())
    }

    pub fn spec_with(&self, weights: EnsembleWeights) -> Result<EnsembleSpec, DecodeError> {
        EnsembleSpec::new(
            self.factories.iter().map(|f| f.session()).collect(),
            weights,
            self.alignment,
        )
    }

    pub fn len(&self) -> usize {
        self.factories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factories.is_empty()
    }
}

/// Checks that `prompt` can be fed to every model of `spec`.
pub fn check_prompt(spec: &EnsembleSpec, prompt: &[TokenId]) -> Result<(), DecodeError> {
    validate(spec, prompt, &GenerationConfig::new(Strategy::Ce, 1, 0))
}
