//! Analytic backpropagation for every loss in [`super::loss`] and a
//! central-difference checker for it.

use super::loss::{
    loss_combined, loss_consistency, loss_entropy_reg, loss_label_smoothing, loss_self,
    loss_web, smoothed_target,
};
use super::model::{ForwardCache, MlpModel, PROB_EPS};
use crate::error::{check_dim, Error, Result};

/// Which loss to differentiate, with its targets and coefficients.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Web { label: usize },
    /// Binary cross-entropy against any soft target (self labels, mixed
    /// labels).
    SelfLabel { target: &'a [f64] },
    Combined { label: usize, target: &'a [f64], c: f64 },
    LabelSmoothing { label: usize, eps: f64 },
    EntropyReg { label: usize, weight: f64 },
    /// Squared disagreement with the prediction on a second view. Gradients
    /// flow through both views.
    Consistency { other_view: &'a [f64] },
}

/// Same layout as [`MlpModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .into_iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn unclamped(raw: f64) -> bool {
    (PROB_EPS..=1.0 - PROB_EPS).contains(&raw)
}

/// `dL/dlogit` for BCE against `target`: `p - q` inside the clamp range.
fn bce_logit_grad(cache: &ForwardCache, target: impl Fn(usize) -> f64) -> Vec<f64> {
    cache
        .raw_probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if unclamped(p) { p - target(j) } else { 0.0 })
        .collect()
}

fn accumulate(model: &MlpModel, x: &[f64], cache: &ForwardCache, dlogits: &[f64], grads: &mut Gradients) {
    let d = model.input_dim;
    let h = model.hidden_dim;
    let mut dhidden = vec![0.0; h];
    for (j, dz) in dlogits.iter().enumerate() {
        if *dz == 0.0 {
            continue;
        }
        grads.b2[j] += dz;
        let wrow = &model.w2[j * h..(j + 1) * h];
        let grow = &mut grads.w2[j * h..(j + 1) * h];
        for k in 0..h {
            grow[k] += dz * cache.hidden[k];
            dhidden[k] += dz * wrow[k];
        }
    }
    for k in 0..h {
        if cache.pre_hidden[k] <= 0.0 {
            continue;
        }
        let da = match &cache.mask {
            Some(m) => dhidden[k] * m[k],
            None => dhidden[k],
        };
        if da == 0.0 {
            continue;
        }
        grads.b1[k] += da;
        let grow = &mut grads.w1[k * d..(k + 1) * d];
        grow.iter_mut().zip(x).for_each(|(g, xi)| *g += da * xi);
    }
}

impl Objective<'_> {
    fn check(&self, model: &MlpModel) -> Result<()> {
        let c = model.num_classes;
        let label_ok = |l: usize| {
            if l < c {
                Ok(())
            } else {
                Err(Error::invalid(format!("label {l} outside [0, {c})")))
            }
        };
        match *self {
            Objective::Web { label } | Objective::LabelSmoothing { label, .. } | Objective::EntropyReg { label, .. } => {
                label_ok(label)
            }
            Objective::SelfLabel { target } => check_dim(c, target.len()),
            Objective::Combined { label, target, .. } => {
                label_ok(label)?;
                check_dim(c, target.len())
            }
            Objective::Consistency { other_view } => check_dim(model.input_dim, other_view.len()),
        }
    }
}

/// Loss value and parameter gradients for one sample. `mask` is the
/// inverted-dropout mask used on the hidden layer (training passes only).
///
/// For [`Objective::Consistency`] the same mask is applied to both views.
pub fn backward(model: &MlpModel, x: &[f64], objective: Objective<'_>, mask: Option<&[f64]>) -> Result<(f64, Gradients)> {
    objective.check(model)?;
    let cache = model.forward_cached(x, mask)?;
    let pred = cache.prediction();
    let mut grads = Gradients::zeros_like(model);
    let loss = match objective {
        Objective::Web { label } => {
            let dz = bce_logit_grad(&cache, |j| if j == label { 1.0 } else { 0.0 });
            accumulate(model, x, &cache, &dz, &mut grads);
            loss_web(&pred, label)?
        }
        Objective::SelfLabel { target } => {
            let dz = bce_logit_grad(&cache, |j| target[j]);
            accumulate(model, x, &cache, &dz, &mut grads);
            loss_self(&pred, target)?
        }
        Objective::Combined { label, target, c } => {
            let b = loss_combined(&pred, label, target, c)?;
            // BCE is linear in its target, so the blend is one BCE
            let dz = bce_logit_grad(&cache, |j| {
                let web = if j == label { 1.0 } else { 0.0 };
                c * web + (1.0 - c) * target[j]
            });
            accumulate(model, x, &cache, &dz, &mut grads);
            b.total
        }
        Objective::LabelSmoothing { label, eps } => {
            let t = smoothed_target(model.num_classes, label, eps);
            let loss = loss_label_smoothing(&pred, label, eps)?;
            let dz = bce_logit_grad(&cache, |j| t[j]);
            accumulate(model, x, &cache, &dz, &mut grads);
            loss
        }
        Objective::EntropyReg { label, weight } => {
            let loss = loss_entropy_reg(&pred, label, weight)?;
            let dz: Vec<f64> = cache
                .raw_probs
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    if !unclamped(p) {
                        return 0.0;
                    }
                    let web = if j == label { 1.0 } else { 0.0 };
                    (p - web) + weight * p * (1.0 - p) * (p / (1.0 - p)).ln()
                })
                .collect();
            accumulate(model, x, &cache, &dz, &mut grads);
            loss
        }
        Objective::Consistency { other_view } => {
            let other = model.forward_cached(other_view, mask)?;
            let other_pred = other.prediction();
            let loss = loss_consistency(&pred, &other_pred)?;
            let n = model.num_classes as f64;
            let mut dz_a = vec![0.0; model.num_classes];
            let mut dz_b = vec![0.0; model.num_classes];
            for j in 0..model.num_classes {
                let diff = 2.0 * (pred.probs[j] - other_pred.probs[j]) / n;
                let (pa, pb) = (cache.raw_probs[j], other.raw_probs[j]);
                if unclamped(pa) {
                    dz_a[j] = diff * pa * (1.0 - pa);
                }
                if unclamped(pb) {
                    dz_b[j] = -diff * pb * (1.0 - pb);
                }
            }
            accumulate(model, x, &cache, &dz_a, &mut grads);
            accumulate(model, other_view, &other, &dz_b, &mut grads);
            loss
        }
    };
    Ok((loss, grads))
}

/// Eval-mode loss value of `objective` at `x`.
pub fn objective_value(model: &MlpModel, x: &[f64], objective: Objective<'_>) -> Result<f64> {
    objective.check(model)?;
    let pred = model.predict(x)?;
    match objective {
        Objective::Web { label } => loss_web(&pred, label),
        Objective::SelfLabel { target } => loss_self(&pred, target),
        Objective::Combined { label, target, c } => Ok(loss_combined(&pred, label, target, c)?.total),
        Objective::LabelSmoothing { label, eps } => loss_label_smoothing(&pred, label, eps),
        Objective::EntropyReg { label, weight } => loss_entropy_reg(&pred, label, weight),
        Objective::Consistency { other_view } => loss_consistency(&pred, &model.predict(other_view)?),
    }
}

/// Gradient of the entropy penalty alone with respect to the output logits.
pub fn entropy_penalty_logit_grad(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    let cache = model.forward_cached(x, None)?;
    Ok(cache
        .raw_probs
        .iter()
        .map(|&p| if unclamped(p) { p * (1.0 - p) * (p / (1.0 - p)).ln() } else { 0.0 })
        .collect())
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, index)` of the worst parameter.
    pub worst: (&'static str, usize),
    pub checked: usize,
    /// Parameters whose perturbation moved a hidden unit across the ReLU
    /// kink; the finite difference is meaningless there.
    pub skipped: usize,
}

const TENSOR_NAMES: [&str; 4] = ["hidden.weight", "hidden.bias", "output.weight", "output.bias"];

fn relu_pattern(model: &MlpModel, xs: &[&[f64]]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for x in xs {
        out.extend(model.forward_cached(x, None)?.pre_hidden.iter().map(|a| *a > 0.0));
    }
    Ok(out)
}

/// Compares [`backward`] against central differences with step
/// [`FD_STEP`] over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, FD_FLOOR)`.
pub fn gradient_check(model: &MlpModel, x: &[f64], objective: Objective<'_>) -> Result<GradCheckReport> {
    let (_, analytic) = backward(model, x, objective, None)?;
    let mut views: Vec<&[f64]> = vec![x];
    if let Objective::Consistency { other_view } = objective {
        views.push(other_view);
    }
    let base_pattern = relu_pattern(model, &views)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (TENSOR_NAMES[0], 0),
        checked: 0,
        skipped: 0,
    };
    for t in 0..4 {
        for i in 0..model.params()[t].len() {
            let orig = model.params()[t][i];
            probe.params_mut()[t][i] = orig + FD_STEP;
            let plus = objective_value(&probe, x, objective)?;
            let plus_pattern = relu_pattern(&probe, &views)?;
            probe.params_mut()[t][i] = orig - FD_STEP;
            let minus = objective_value(&probe, x, objective)?;
            let minus_pattern = relu_pattern(&probe, &views)?;
            probe.params_mut()[t][i] = orig;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.tensors()[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (TENSOR_NAMES[t], i);
            }
        }
    }
    Ok(report)
}
