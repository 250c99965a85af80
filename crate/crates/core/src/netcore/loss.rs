//! Losses over per-class sigmoid predictions.
//!
//! Every loss reads the already clamped probabilities of a [`Prediction`],
//! and every binary cross-entropy sums per-class terms in class order, so a
//! one-hot self label reproduces the web-label loss bit for bit.

use super::model::{clamp_prob, Prediction};
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;
pub const DEFAULT_ENTROPY_WEIGHT: f64 = 0.1;

/// Per-sample terms of the confidence-weighted objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_w: f64,
    pub l_s: f64,
    pub c: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_w: f64, l_s: f64, c: f64) -> Self {
        Self {
            l_w,
            l_s,
            c,
            total: c * l_w + (1.0 - c) * l_s,
        }
    }
}

fn check_label(pred: &Prediction, label: usize) -> Result<()> {
    if label < pred.len() {
        Ok(())
    } else {
        Err(Error::invalid(format!("label {label} outside [0, {})", pred.len())))
    }
}

/// `-[ln p_w + sum_{j != w} ln(1 - p_j)]`.
pub fn loss_web(pred: &Prediction, web_label: usize) -> Result<f64> {
    check_label(pred, web_label)?;
    let mut acc = 0.0;
    for (j, p) in pred.probs.iter().enumerate() {
        let p = clamp_prob(*p);
        acc += if j == web_label { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(-acc)
}

/// Binary cross-entropy against a soft per-class target.
pub fn loss_self(pred: &Prediction, target: &[f64]) -> Result<f64> {
    check_dim(pred.len(), target.len())?;
    if let Some(q) = target.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::invalid(format!("soft target entry {q} outside [0, 1]")));
    }
    let mut acc = 0.0;
    for (p, q) in pred.probs.iter().zip(target) {
        let p = clamp_prob(*p);
        acc += q * p.ln() + (1.0 - q) * (1.0 - p).ln();
    }
    Ok(-acc)
}

/// `c * loss_web + (1 - c) * loss_self`.
pub fn loss_combined(pred: &Prediction, web_label: usize, self_label: &[f64], c: f64) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
    }
    let l_w = loss_web(pred, web_label)?;
    let l_s = loss_self(pred, self_label)?;
    Ok(LossBreakdown::from_parts(l_w, l_s, c))
}

/// Target with `1 - eps` at the web label and `eps` on every other class.
pub fn smoothed_target(num_classes: usize, web_label: usize, eps: f64) -> Vec<f64> {
    (0..num_classes)
        .map(|j| if j == web_label { 1.0 - eps } else { eps })
        .collect()
}

pub fn loss_label_smoothing(pred: &Prediction, web_label: usize, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!("smoothing eps {eps} outside [0, 1)")));
    }
    check_label(pred, web_label)?;
    loss_self(pred, &smoothed_target(pred.len(), web_label, eps))
}

/// Negative summed per-class binary entropy, `sum_j p ln p + (1-p) ln(1-p)`.
/// Always `<= 0`; approaches 0 as predictions saturate.
pub fn entropy_penalty(pred: &Prediction) -> f64 {
    pred.probs
        .iter()
        .map(|p| {
            let p = clamp_prob(*p);
            p * p.ln() + (1.0 - p) * (1.0 - p).ln()
        })
        .sum()
}

/// Web loss plus `weight` times the negative entropy, which rewards
/// unsaturated outputs.
pub fn loss_entropy_reg(pred: &Prediction, web_label: usize, weight: f64) -> Result<f64> {
    if !(weight >= 0.0) {
        return Err(Error::invalid(format!("entropy weight {weight} must be non-negative")));
    }
    Ok(loss_web(pred, web_label)? + weight * entropy_penalty(pred))
}

/// Mean squared difference between two probability vectors.
pub fn loss_consistency(a: &Prediction, b: &Prediction) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let n = a.len().max(1) as f64;
    Ok(a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}
