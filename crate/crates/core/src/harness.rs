//! Statistical comparison of CE and ME.
//!
//! For each prefix the analytic CE distribution comes from [`ce_step`]; the
//! ME side is estimated by drawing first tokens from many independent
//! sessions. Session `s` of prefix `k` always uses the RNG stream derived
//! from `(seed, k, s)`, and per-worker counts are merged by summation, so the
//! report does not depend on how draws are scheduled across threads.

use std::num::NonZeroUsize;
use std::thread;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::decoding::{
    ce_step, check_prompt, me_step, DecodeError, EnsembleBlueprint, KvLedger,
};
use crate::distribution::{tv_distance_raw, EnsembleWeights};
use crate::rng::SeededRng;
use crate::vocab::TokenId;

/// Minimum expected count for a chi-square cell to stand on its own.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Pass requires TV strictly below this.
    pub tv: f64,
    /// Pass requires the chi-square p-value strictly above this.
    pub p_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tv: 0.01,
            p_floor: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against `expected`
/// probabilities. Cells with expected count below [`MIN_EXPECTED`] are pooled
/// into one cell; a pooled cell that is still too small joins the smallest
/// remaining cell.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> ChiSquare {
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    let mut impossible = false;
    for (&o, &p) in observed.iter().zip(expected) {
        let e = p * n;
        if e == 0.0 {
            // an outcome the reference rules out cannot be pooled away
            impossible |= o > 0;
        } else if e >= MIN_EXPECTED {
            cells.push((o as f64, e));
        } else {
            pooled.0 += o as f64;
            pooled.1 += e;
        }
    }
    if pooled.0 > 0.0 || pooled.1 > 0.0 {
        if pooled.1 >= MIN_EXPECTED || cells.is_empty() {
            cells.push(pooled);
        } else {
            let smallest = cells
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            smallest.0 += pooled.0;
            smallest.1 += pooled.1;
        }
    }
    let statistic: f64 = if impossible {
        f64::INFINITY
    } else {
        cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum()
    };
    let dof = cells.len().saturating_sub(1);
    let p_value = if impossible {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map(|d| d.sf(statistic))
            .unwrap_or(0.0)
    };
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixReport {
    pub prefix: Vec<TokenId>,
    pub prefix_text: String,
    pub analytic: Vec<f64>,
    pub empirical: Vec<f64>,
    pub tv: f64,
    pub chi_square: ChiSquare,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Weights of the analytic CE side.
    pub lambda: Vec<f64>,
    /// Weights ME sampled with; equal to `lambda` unless deliberately mismatched.
    pub sample_lambda: Vec<f64>,
    pub samples: usize,
    pub thresholds: Thresholds,
    pub prefixes: Vec<PrefixReport>,
    pub max_tv: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EquivalenceConfig {
    pub samples: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// ME weights; `None` samples with the blueprint's own weights.
    pub sample_weights: Option<EnsembleWeights>,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<NonZeroUsize>,
    /// Joins prefix tokens in the report text.
    pub separator: String,
}

impl EquivalenceConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            thresholds: Thresholds::default(),
            sample_weights: None,
            workers: None,
            separator: String::new(),
        }
    }
}

fn session_id(prefix_index: usize, draw: usize) -> u64 {
    ((prefix_index as u64) << 40) | draw as u64
}

/// Counts ME first tokens at `prefix` over `samples` independent sessions.
pub fn sample_first_tokens(
    blueprint: &EnsembleBlueprint,
    weights: &EnsembleWeights,
    prefix: &[TokenId],
    prefix_index: usize,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<u64>, DecodeError> {
    let workers = workers.clamp(1, samples.max(1));
    let chunk = samples.div_ceil(workers);
    let results: Vec<Result<Vec<u64>, DecodeError>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * chunk)..((w + 1) * chunk).min(samples);
                scope.spawn(move || {
                    let mut spec = blueprint.spec_with(weights.clone())?;
                    let mut counts = vec![0u64; spec.unified().len()];
                    for draw in range {
                        spec.reset();
                        let mut ledger = KvLedger::new(spec.len());
                        let mut rng = SeededRng::for_session(seed, session_id(prefix_index, draw));
                        let step = me_step(&mut spec, prefix, &mut ledger, &mut rng)?;
                        counts[step.token] += 1;
                    }
                    Ok(counts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampling worker panicked"))
            .collect()
    });
    let mut total: Vec<u64> = Vec::new();
    for counts in results {
        let counts = counts?;
        if total.is_empty() {
            total = counts;
        } else {
            for (t, c) in total.iter_mut().zip(counts) {
                *t += c;
            }
        }
    }
    Ok(total)
}

/// The analytic CE distribution at `prefix`, from a fresh session.
pub fn analytic_ce(blueprint: &EnsembleBlueprint, prefix: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
    let mut spec = blueprint.spec()?;
    check_prompt(&spec, prefix)?;
    let mut ledger = KvLedger::new(spec.len());
    Ok(ce_step(&mut spec, prefix, &mut ledger)?.dist.into_probs())
}

pub fn equivalence(
    blueprint: &EnsembleBlueprint,
    prefixes: &[Vec<TokenId>],
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport, DecodeError> {
    let sample_weights = cfg
        .sample_weights
        .clone()
        .unwrap_or_else(|| blueprint.weights.clone());
    let workers = cfg
        .workers
        .or_else(|| thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get);
    let spec = blueprint.spec()?;
    let vocab = spec.unified().vocab().clone();
    let mut reports = Vec::with_capacity(prefixes.len());
    for (k, prefix) in prefixes.iter().enumerate() {
        let analytic = analytic_ce(blueprint, prefix)?;
        let counts =
            sample_first_tokens(blueprint, &sample_weights, prefix, k, cfg.samples, cfg.seed, workers)?;
        let n = cfg.samples.max(1) as f64;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let tv = tv_distance_raw(&empirical, &analytic);
        let chi = chi_square(&counts, &analytic);
        let pass = tv < cfg.thresholds.tv && chi.p_value > cfg.thresholds.p_floor;
        reports.push(PrefixReport {
            prefix: prefix.clone(),
            prefix_text: vocab.decode(prefix)?.join(&cfg.separator),
            analytic,
            empirical,
            tv,
            chi_square: chi,
            pass,
        });
    }
    let max_tv = reports.iter().map(|r| r.tv).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        lambda: blueprint.weights.lambdas().to_vec(),
        sample_lambda: sample_weights.lambdas().to_vec(),
        samples: cfg.samples,
        thresholds: cfg.thresholds,
        pass: reports.iter().all(|r| r.pass),
        prefixes: reports,
        max_tv,
    })
}

/// Weight grid `{0, step, 2·step, …, 1}` for the first of two models.
pub fn lambda_grid(step: f64) -> Vec<f64> {
    let steps = (1.0 / step).round() as usize;
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// Runs [`equivalence`] for a two-model blueprint at every `λ` in `grid`,
/// with weights `[λ, 1 − λ]` on both sides.
pub fn lambda_sweep(
    blueprint: &EnsembleBlueprint,
    prefixes: &[Vec<TokenId>],
    grid: &[f64],
    cfg: &EquivalenceConfig,
) -> Result<Vec<EquivalenceReport>, DecodeError> {
    grid.iter()
        .map(|&l| {
            let weights = EnsembleWeights::new(vec![l, 1.0 - l])?;
            let mut bp = blueprint.clone();
            bp.weights = weights;
            let cfg = EquivalenceConfig {
                sample_weights: None,
                ..cfg.clone()
            };
            equivalence(&bp, prefixes, &cfg)
        })
        .collect()
}
