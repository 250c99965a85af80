//! Learning-rate schedule, momentum SGD and class reweighting.

use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::dataset::SyntheticDataset;
use crate::error::{Error, Result};
use crate::netcore::{Gradients, MlpModel};

/// Linear warmup to `initial_lr` over the first `warmup_epochs` epochs,
/// then a half-cosine decay over the rest.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let lr = config.initial_lr;
    let w = config.warmup_epochs;
    let l = config.epochs;
    if epoch < w {
        lr * (epoch + 1) as f64 / w as f64
    } else {
        let progress = (epoch - w) as f64 / (l - w) as f64;
        0.5 * lr * (1.0 + (PI * progress).cos())
    }
}

/// Momentum buffer, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Gradients,
}

impl SgdState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
        }
    }
}

/// `v <- momentum * v + g + wd * theta; theta <- theta - lr * v`.
///
/// Weight decay enters through the velocity (coupled L2) and applies to
/// weight matrices only, never to biases.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<()> {
    let shapes_match = model
        .params()
        .iter()
        .zip(grads.tensors())
        .zip(state.velocity.tensors())
        .all(|((p, g), v)| p.len() == g.len() && p.len() == v.len());
    if !shapes_match {
        return Err(Error::invalid("gradient shapes do not match the model"));
    }
    let decays = [weight_decay, 0.0, weight_decay, 0.0];
    let velocity = [
        &mut state.velocity.w1,
        &mut state.velocity.b1,
        &mut state.velocity.w2,
        &mut state.velocity.b2,
    ];
    for (((param, grad), vel), wd) in model.params_mut().into_iter().zip(grads.tensors()).zip(velocity).zip(decays) {
        for ((p, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *v = momentum * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Inverse web-label frequency normalized to mean one over classes:
/// `w_c = (N / C) / count_c`.
pub fn class_weights(ds: &SyntheticDataset) -> Result<Vec<f64>> {
    let counts = ds.web_label_counts();
    let n = ds.len() as f64;
    let c = ds.num_classes as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &cnt)| if cnt == 0 { Err(Error::EmptyClass(k)) } else { Ok((n / c) / cnt as f64) })
        .collect()
}
