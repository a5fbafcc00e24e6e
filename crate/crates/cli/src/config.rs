//! The JSON run configuration shared by `generate`, `equivalence` and `bench`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use ensemble_core::decoding::{EnsembleBlueprint, LatencyModel, Strategy};
use ensemble_core::harness::Thresholds;
use ensemble_core::predictors::{
    tokenize, NGramModel, PredictorFactory, RemoteConfig, RemoteFactory, TableModel, Tokenization,
};
use ensemble_core::{AlignmentConfig, EnsembleWeights, TokenId, TopK, Vocabulary};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelDescriptor {
    Table {
        path: PathBuf,
    },
    Ngram {
        path: PathBuf,
    },
    Remote {
        endpoint: String,
        model: String,
        /// JSON list of the tokens the endpoint may return.
        vocab: PathBuf,
        #[serde(default)]
        timeout_ms: Option<u64>,
        #[serde(default)]
        top_logprobs: Option<usize>,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default)]
        tokenization: Tokenization,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Single,
    Ce,
    Me,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    /// Prefix strings, split with the run's tokenization.
    #[serde(default)]
    pub prefixes: Vec<String>,
    /// ME weights when deliberately different from `weights`.
    #[serde(default)]
    pub sample_weights: Option<Vec<f64>>,
    #[serde(default = "default_step")]
    pub lambda_step: f64,
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            thresholds: None,
            prefixes: Vec::new(),
            sample_weights: None,
            lambda_step: default_step(),
        }
    }
}

fn default_samples() -> usize {
    200_000
}

fn default_step() -> f64 {
    0.1
}

fn default_max_new_tokens() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<ModelDescriptor>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub strategy: Option<StrategyName>,
    /// Model used by the `single` strategy.
    #[serde(default)]
    pub single_model: usize,
    #[serde(default)]
    pub top_k: TopK,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub tokenization: Tokenization,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default)]
    pub greedy: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub equivalence: EquivalenceSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses `path`; call [`RunConfig::validate`] once overrides are applied.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Checks everything that can be checked without loading a model.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.models.is_empty() {
            bail!("at least one model is required");
        }
        let weights = self.weights()?;
        if weights.len() != self.models.len() {
            bail!("{} models but {} weights", self.models.len(), weights.len());
        }
        if let Some(w) = &self.equivalence.sample_weights {
            let w = EnsembleWeights::new(w.clone()).context("equivalence.sample_weights")?;
            if w.len() != self.models.len() {
                bail!("equivalence.sample_weights has {} entries for {} models", w.len(), self.models.len());
            }
        }
        if self.max_new_tokens == 0 {
            bail!("max_new_tokens must be at least 1");
        }
        if self.strategy == Some(StrategyName::Single) && self.single_model >= self.models.len() {
            bail!("single_model {} out of range", self.single_model);
        }
        if self.strategy == Some(StrategyName::Me) && self.greedy {
            bail!("greedy decoding cannot be combined with the mixture-model-like ensemble");
        }
        let lat = &self.latency;
        if !(lat.decode_ms >= 0.0 && lat.prefill_chunk_ms >= 0.0) || lat.max_chunk == 0 {
            bail!("latency parameters must be non-negative with max_chunk ≥ 1");
        }
        let step = self.equivalence.lambda_step;
        if !(step > 0.0 && step <= 1.0) {
            bail!("equivalence.lambda_step must be in (0, 1]");
        }
        Ok(())
    }

    pub fn weights(&self) -> anyhow::Result<EnsembleWeights> {
        match &self.weights {
            Some(w) => EnsembleWeights::new(w.clone()).context("weights"),
            None => Ok(EnsembleWeights::uniform(self.models.len())?),
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self.strategy.unwrap_or(StrategyName::Me) {
            StrategyName::Single => Strategy::Single(self.single_model),
            StrategyName::Ce => Strategy::Ce,
            StrategyName::Me => Strategy::Me,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_models(&self) -> anyhow::Result<Vec<Arc<dyn PredictorFactory>>> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| self.load_model(m).with_context(|| format!("model {i}")))
            .collect()
    }

    fn load_model(&self, m: &ModelDescriptor) -> anyhow::Result<Arc<dyn PredictorFactory>> {
        let read = |p: &Path| {
            let p = self.resolve(p);
            fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
        };
        Ok(match m {
            ModelDescriptor::Table { path } => {
                Arc::new(serde_json::from_str::<TableModel>(&read(path)?)?) as Arc<dyn PredictorFactory>
            }
            ModelDescriptor::Ngram { path } => Arc::new(serde_json::from_str::<NGramModel>(&read(path)?)?),
            ModelDescriptor::Remote {
                endpoint,
                model,
                vocab,
                timeout_ms,
                top_logprobs,
                auth_env,
                tokenization,
            } => {
                let vocab: Vocabulary = serde_json::from_str(&read(vocab)?)?;
                let defaults: RemoteConfig = serde_json::from_value(serde_json::json!({
                    "endpoint": endpoint, "model": model
                }))?;
                Arc::new(RemoteFactory {
                    config: RemoteConfig {
                        timeout_ms: timeout_ms.unwrap_or(defaults.timeout_ms),
                        top_logprobs: top_logprobs.unwrap_or(defaults.top_logprobs),
                        auth_env: auth_env.clone(),
                        tokenization: *tokenization,
                        ..defaults
                    },
                    vocab,
                })
            }
        })
    }

    pub fn blueprint(&self) -> anyhow::Result<EnsembleBlueprint> {
        let factories = self.load_models()?;
        EnsembleBlueprint::new(factories, self.weights()?, AlignmentConfig { top_k: self.top_k })
            .map_err(|e| anyhow!(e))
    }

    /// Splits `text` with the run's tokenization and encodes it in `vocab`.
    pub fn encode(&self, vocab: &Vocabulary, text: &str) -> anyhow::Result<Vec<TokenId>> {
        let toks = tokenize(text, self.tokenization);
        vocab
            .encode(toks.iter().map(String::as_str))
            .with_context(|| format!("encoding {text:?}"))
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.as_ref().map(|p| self.resolve(p)))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> anyhow::Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config() {
        let cfg = parse(r#"{"models":[{"kind":"table","path":"a.json"}]}"#).unwrap();
        assert_eq!(cfg.weights().unwrap().lambdas(), &[1.0]);
        assert_eq!(cfg.strategy(), Strategy::Me);
        assert_eq!(cfg.top_k, TopK::All);
        assert_eq!(cfg.latency, LatencyModel::default());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(parse(r#"{"models":[{"kind":"table","path":"a"}],"temperature":0.7}"#).is_err());
        assert!(parse(r#"{"models":[{"kind":"table","path":"a","extra":1}]}"#).is_err());
        assert!(parse(r#"{"models":[{"kind":"gguf","path":"a"}]}"#).is_err());
    }

    #[test]
    fn validation_errors() {
        let two = r#"[{"kind":"table","path":"a"},{"kind":"table","path":"b"}]"#;
        assert!(parse(&format!(r#"{{"models":{two},"weights":[1.0]}}"#)).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"weights":[0.7,0.7]}}"#)).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"strategy":"me","greedy":true}}"#)).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"strategy":"single","single_model":2}}"#)).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"max_new_tokens":0}}"#)).is_err());
        assert!(parse(r#"{"models":[]}"#).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"top_k":0}}"#)).is_err());
        assert!(parse(&format!(r#"{{"models":{two},"top_k":5}}"#)).is_ok());
    }
}
