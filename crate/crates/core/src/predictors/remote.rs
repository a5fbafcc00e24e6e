use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{KvState, PredictError, PredictorFactory, TokenPredictor, Tokenization};
use crate::distribution::Distribution;
use crate::vocab::{TokenId, Vocabulary};

const ATTEMPTS: u32 = 2;

/// Connection settings for a completions-style endpoint that returns
/// per-token top logprobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: usize,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub tokenization: Tokenization,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_top_logprobs() -> usize {
    5
}

/// Predictor backed by a remote inference server.
///
/// The server is stateless from our side, so the session cache only tracks
/// which prefix has been sent. Each `predict` posts the whole prefix as the
/// prompt and asks for a single token with its top logprobs.
pub struct RemotePredictor {
    config: RemoteConfig,
    vocab: Vocabulary,
    agent: ureq::Agent,
    cache: KvState,
}

impl RemotePredictor {
    pub fn new(config: RemoteConfig, vocab: Vocabulary) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self {
            config,
            vocab,
            agent,
            cache: KvState::default(),
        }
    }

    fn prompt(&self, context: &[TokenId]) -> Result<String, PredictError> {
        let toks = self.vocab.decode(context)?;
        Ok(self.config.tokenization.join(&toks))
    }

    fn request(&self, prompt: &str) -> Result<CompletionResponse, PredictError> {
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": self.config.top_logprobs,
            "temperature": 1.0,
        });
        let token = match &self.config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                PredictError::Remote(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        for _ in 0..ATTEMPTS {
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(t) = &token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<CompletionResponse>()
                        .map_err(|e| PredictError::Remote(format!("malformed response: {e}")))
                }
                Err(ureq::Error::Transport(t)) if is_timeout(&t) => continue,
                Err(ureq::Error::Status(code, _)) => {
                    return Err(PredictError::Remote(format!("HTTP status {code}")))
                }
                Err(e) => return Err(PredictError::Remote(e.to_string())),
            }
        }
        Err(PredictError::RemoteTimeout { attempts: ATTEMPTS })
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().contains("timed out")
}

/// Turns top-k logprobs into a distribution over `vocab`.
///
/// Returned tokens are exponentiated and clamped at zero; tokens outside the
/// vocabulary are dropped. Whatever mass the server did not account for is
/// spread evenly over the vocabulary entries it did not return, then the
/// vector is normalized.
pub fn complete_logprobs(
    vocab: &Vocabulary,
    top: &HashMap<String, f64>,
) -> Result<Distribution, PredictError> {
    let mut probs = vec![0.0; vocab.len()];
    let mut returned = vec![false; vocab.len()];
    let mut known_mass = 0.0;
    for (tok, &lp) in top {
        let Some(id) = vocab.id(tok) else { continue };
        let p = if lp.is_finite() { lp.exp().max(0.0) } else { 0.0 };
        probs[id] += p;
        returned[id] = true;
        known_mass += p;
    }
    let missing = returned.iter().filter(|r| !**r).count();
    let leftover = (1.0 - known_mass).max(0.0);
    if missing > 0 && leftover > 0.0 {
        let share = leftover / missing as f64;
        for (p, r) in probs.iter_mut().zip(&returned) {
            if !r {
                *p = share;
            }
        }
    }
    Ok(Distribution::from_weights(&probs)?)
}

impl TokenPredictor for RemotePredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
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
        let mut context = cached.to_vec();
        context.extend_from_slice(uncached);
        let prompt = self.prompt(&context)?;
        let response = self.request(&prompt)?;
        let top = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .and_then(|l| l.top_logprobs.into_iter().next())
            .ok_or_else(|| PredictError::Remote("response carries no top_logprobs".into()))?;
        complete_logprobs(&self.vocab, &top)
    }
}

/// Factory for remote sessions; every session gets its own HTTP agent.
#[derive(Debug, Clone)]
pub struct RemoteFactory {
    pub config: RemoteConfig,
    pub vocab: Vocabulary,
}

impl PredictorFactory for RemoteFactory {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn session(&self) -> Box<dyn TokenPredictor> {
        Box::new(RemotePredictor::new(self.config.clone(), self.vocab.clone()))
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    top_logprobs: Vec<HashMap<String, f64>>,
}
