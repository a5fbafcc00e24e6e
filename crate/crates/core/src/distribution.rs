//! Categorical distributions, ensemble weights and the two sampling
//! primitives the decoding strategies are built on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::vocab::TokenId;

/// Absolute tolerance for the simplex check.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("vector has zero total mass")]
    ZeroMass,
    #[error("entries sum to {sum}, outside 1 ± {PROB_TOLERANCE}")]
    NotNormalized { sum: f64 },
    #[error("vocabulary mismatch: {left} vs {right} entries")]
    VocabMismatch { left: usize, right: usize },
}

fn check_entries(values: &[f64]) -> Result<f64, DistributionError> {
    if values.is_empty() {
        return Err(DistributionError::Empty);
    }
    let mut sum = 0.0;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(DistributionError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(DistributionError::NegativeEntry { index, value });
        }
        sum += value;
    }
    Ok(sum)
}

/// Scales a non-negative vector so that it sums to one.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>, DistributionError> {
    let sum = check_entries(values)?;
    if sum <= 0.0 {
        return Err(DistributionError::ZeroMass);
    }
    Ok(values.iter().map(|v| v / sum).collect())
}

/// A validated probability vector over a vocabulary.
///
/// The vocabulary itself is carried by the owner (a predictor or a unified
/// vocabulary); two distributions are comparable when their lengths agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates `probs` as a simplex. A sum within [`PROB_TOLERANCE`] of one
    /// is silently renormalized; anything further off is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        let sum = check_entries(&probs)?;
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum });
        }
        let probs = if sum == 1.0 {
            probs
        } else {
            probs.into_iter().map(|p| p / sum).collect()
        };
        Ok(Self { probs })
    }

    /// Wraps entries taken verbatim from an existing distribution (a
    /// permutation with zero padding), which keeps the simplex property.
    pub(crate) fn from_validated(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= PROB_TOLERANCE);
        Self { probs }
    }

    /// Normalizes arbitrary non-negative mass into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self, DistributionError> {
        Ok(Self {
            probs: normalize(weights)?,
        })
    }

    pub fn uniform(size: usize) -> Result<Self, DistributionError> {
        if size == 0 {
            return Err(DistributionError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn point_mass(size: usize, at: TokenId) -> Result<Self, DistributionError> {
        if at >= size {
            return Err(DistributionError::VocabMismatch {
                left: size,
                right: at + 1,
            });
        }
        let mut probs = vec![0.0; size];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability token, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn ensure_same_vocab(&self, other: &Distribution) -> Result<(), DistributionError> {
        if self.len() != other.len() {
            return Err(DistributionError::VocabMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// `Σ wᵢ·dᵢ` over distributions of equal length; `weights` must sum to one.
    pub fn mix(parts: &[(f64, &Distribution)]) -> Result<Self, DistributionError> {
        let first = parts.first().ok_or(DistributionError::Empty)?.1;
        let mut acc = vec![0.0; first.len()];
        for (w, d) in parts {
            first.ensure_same_vocab(d)?;
            for (a, p) in acc.iter_mut().zip(d.probs()) {
                *a += w * p;
            }
        }
        Self::new(acc)
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        Distribution::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Mixture weights `λ₁..λₙ` on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EnsembleWeights {
    lambdas: Distribution,
}

impl EnsembleWeights {
    pub fn new(lambdas: Vec<f64>) -> Result<Self, DistributionError> {
        Ok(Self {
            lambdas: Distribution::new(lambdas)?,
        })
    }

    pub fn from_unnormalized(values: &[f64]) -> Result<Self, DistributionError> {
        Ok(Self {
            lambdas: Distribution::from_weights(values)?,
        })
    }

    pub fn uniform(n: usize) -> Result<Self, DistributionError> {
        Ok(Self {
            lambdas: Distribution::uniform(n)?,
        })
    }

    /// All mass on model `index`.
    pub fn one_hot(n: usize, index: usize) -> Result<Self, DistributionError> {
        Ok(Self {
            lambdas: Distribution::point_mass(n, index)?,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        self.lambdas.probs()
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// The weights viewed as a distribution over model indices.
    pub fn as_distribution(&self) -> &Distribution {
        &self.lambdas
    }
}

impl<'de> Deserialize<'de> for EnsembleWeights {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let lambdas = Distribution::deserialize(deserializer)?;
        Ok(Self { lambdas })
    }
}

/// Inverse-CDF draw from a validated probability vector using one uniform.
fn sample_categorical(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_positive = i;
        if u < cumulative {
            return i;
        }
    }
    // u landed in the rounding slack above the final cumulative sum
    last_positive
}

/// Draws a token index with probability `dist.probs()[index]`.
pub fn sample_token(dist: &Distribution, rng: &mut SeededRng) -> TokenId {
    sample_categorical(dist.probs(), rng)
}

/// Draws model index `i` with probability `λᵢ`. Shares its implementation
/// with [`sample_token`]: the weights are a distribution over model indices.
pub fn sample_index(weights: &EnsembleWeights, rng: &mut SeededRng) -> usize {
    sample_token(weights.as_distribution(), rng)
}

/// Total variation distance `½·Σ|aᵢ − bᵢ|`.
pub fn tv_distance(a: &Distribution, b: &Distribution) -> Result<f64, DistributionError> {
    a.ensure_same_vocab(b)?;
    Ok(tv_distance_raw(a.probs(), b.probs()))
}

pub(crate) fn tv_distance_raw(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
