//! Convex mixing of sample pairs, with a Beta(α, α) coefficient per pair.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    /// `partners[i]` is the batch position mixed into position `i`.
    pub partners: Vec<usize>,
}

pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda * a + (1 - lambda) * b`, elementwise.
pub fn mix(lambda: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Mixes with explicit coefficients and partners.
pub fn mix_with(inputs: &[Vec<f64>], targets: &[Vec<f64>], lambdas: &[f64], partners: &[usize]) -> Result<MixedBatch> {
    let n = inputs.len();
    if targets.len() != n || lambdas.len() != n || partners.len() != n {
        return Err(Error::invalid("mixup inputs, targets, lambdas and partners must have equal length"));
    }
    if let Some(&j) = partners.iter().find(|&&j| j >= n) {
        return Err(Error::invalid(format!("partner index {j} outside batch of {n}")));
    }
    let mut out = MixedBatch {
        inputs: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        lambdas: lambdas.to_vec(),
        partners: partners.to_vec(),
    };
    for i in 0..n {
        let (j, lam) = (partners[i], lambdas[i]);
        out.inputs.push(mix(lam, &inputs[i], &inputs[j]));
        out.targets.push(mix(lam, &targets[i], &targets[j]));
    }
    Ok(out)
}

/// Pairs every sample with a random permutation partner and mixes inputs
/// and targets with a fresh Beta(α, α) draw per pair. Targets may be one-hot
/// or soft; any per-sample quantity appended to a target row is mixed with
/// the same coefficient.
pub fn mixup_batch<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("mixup alpha must be positive, got {alpha}")));
    }
    let mut partners: Vec<usize> = (0..inputs.len()).collect();
    partners.shuffle(rng);
    let lambdas = (0..inputs.len())
        .map(|_| sample_lambda(alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    mix_with(inputs, targets, &lambdas, &partners)
}
