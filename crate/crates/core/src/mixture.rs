//! Rewriting a combined distribution as a two-component mixture.
//!
//! If a combination `C` of several models' distributions dominates a scaled
//! copy of one of them, `C(x) ≥ λ·p(x)` for every token, then
//! `C = (1 − λ)·C' + λ·p` with `C' = (C − λ·p) / (1 − λ)` a valid
//! distribution. Sampling `p` with probability `λ` and `C'` otherwise
//! reproduces `C`, and the `p` branch only needs the model behind `p`.

use thiserror::Error;

use crate::distribution::{Distribution, DistributionError};
use crate::rng::SeededRng;
use crate::vocab::TokenId;

/// Absolute per-entry slack for the containment check.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("lambda {0} is outside the open interval (0, 1)")]
    LambdaOutOfRange(f64),
    #[error(
        "containment violated at token {token}: C = {combined} < λ·p = {scaled_base}"
    )]
    ContainmentViolated {
        token: TokenId,
        combined: f64,
        scaled_base: f64,
    },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// `C = (1 − λ)·C' + λ·p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDecomposition {
    lambda: f64,
    base: Distribution,
    residual: Distribution,
    combined: Distribution,
}

impl MixtureDecomposition {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `p`, sampled with probability λ.
    pub fn base(&self) -> &Distribution {
        &self.base
    }

    /// `C'`, sampled with probability 1 − λ.
    pub fn residual(&self) -> &Distribution {
        &self.residual
    }

    pub fn combined(&self) -> &Distribution {
        &self.combined
    }

    /// `(1 − λ)·C' + λ·p`, entrywise.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.residual
            .probs()
            .iter()
            .zip(self.base.probs())
            .map(|(r, p)| (1.0 - self.lambda) * r + self.lambda * p)
            .collect()
    }
}

/// Largest λ in `[0, 1]` with `C ≥ λ·p` everywhere: `min over supp(p) of C(x)/p(x)`.
pub fn max_lambda(combined: &Distribution, base: &Distribution) -> Result<f64, MixtureError> {
    combined.ensure_same_vocab(base)?;
    let ratio = combined
        .probs()
        .iter()
        .zip(base.probs())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| c / p)
        .fold(f64::INFINITY, f64::min);
    Ok(ratio.clamp(0.0, 1.0))
}

pub fn decompose(
    combined: &Distribution,
    base: &Distribution,
    lambda: f64,
) -> Result<MixtureDecomposition, MixtureError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(MixtureError::LambdaOutOfRange(lambda));
    }
    combined.ensure_same_vocab(base)?;
    let mut residual = Vec::with_capacity(combined.len());
    for (token, (&c, &p)) in combined.probs().iter().zip(base.probs()).enumerate() {
        let slack = c - lambda * p;
        if slack < -CONTAINMENT_TOLERANCE {
            return Err(MixtureError::ContainmentViolated {
                token,
                combined: c,
                scaled_base: lambda * p,
            });
        }
        residual.push(slack.max(0.0) / (1.0 - lambda));
    }
    let residual = Distribution::from_weights(&residual)?;
    Ok(MixtureDecomposition {
        lambda,
        base: base.clone(),
        residual,
        combined: combined.clone(),
    })
}

/// Which component a decomposed draw came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The base `p`: only its own model runs.
    Cheap,
    /// The residual `C'`: needs the full combination.
    Expensive,
}

/// Samples from `C` through its decomposition: the cheap sampler with
/// probability λ, the expensive one otherwise.
pub fn decomposed_sample<Cheap, Expensive>(
    d: &MixtureDecomposition,
    cheap: &mut Cheap,
    expensive: &mut Expensive,
    rng: &mut SeededRng,
) -> (TokenId, Branch)
where
    Cheap: FnMut(&mut SeededRng) -> TokenId,
    Expensive: FnMut(&mut SeededRng) -> TokenId,
{
    if rng.uniform() < d.lambda {
        (cheap(rng), Branch::Cheap)
    } else {
        (expensive(rng), Branch::Expensive)
    }
}
