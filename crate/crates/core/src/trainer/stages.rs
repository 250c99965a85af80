//! Stage-one pretraining, self-label extraction, stage-two finetuning and
//! the single-stage consistency baseline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::artifacts::StageOneArtifacts;
use super::config::{Regularizer, TrainConfig};
use super::mixup::mixup_batch;
use super::optim::{class_weights, lr_at, sgd_step, SgdState};
use crate::calib::accuracy;
use crate::dataset::SyntheticDataset;
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::netcore::{backward, Checkpoint, Classifier, Gradients, MlpModel, Objective};
use crate::util::{self, fmt_f64, stream_rng, Stream};

/// Stage-one output: one model, or `E` models for an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub regularizer: Regularizer,
    pub members: Vec<MlpModel>,
}

impl Pretrained {
    /// The model stage two starts from.
    pub fn primary(&self) -> &MlpModel {
        &self.members[0]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            regularizer: self.regularizer.to_string(),
            members: self.members.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Ok(Self {
            regularizer: ck.regularizer.parse()?,
            members: ck.members,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Classifier for Pretrained {
    /// Mean eval-mode prediction over the members.
    fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.primary().class_probs(x)?;
        if self.members.len() > 1 {
            for m in &self.members[1..] {
                out.iter_mut().zip(m.class_probs(x)?).for_each(|(a, p)| *a += p);
            }
            let e = self.members.len() as f64;
            out.iter_mut().for_each(|v| *v /= e);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean weighted per-sample loss over the epoch.
    pub train_loss: f64,
    pub clean_test_acc: Option<f64>,
}

pub fn save_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,clean_test_acc\n");
    for e in log {
        let acc = e.clean_test_acc.map_or_else(|| "nan".to_string(), fmt_f64);
        out.push_str(&format!("{},{},{},{}\n", e.epoch, fmt_f64(e.lr), fmt_f64(e.train_loss), acc));
    }
    util::write_atomic(path, &out)
}

fn one_hot(num_classes: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[k] = 1.0;
    v
}

fn sample_weights(ds: &SyntheticDataset, config: &TrainConfig) -> Result<Vec<f64>> {
    if config.class_reweighting {
        class_weights(ds)
    } else {
        Ok(vec![1.0; ds.num_classes])
    }
}

/// Randomness consumed inside batches, one stream per purpose.
struct BatchRngs {
    dropout: ChaCha8Rng,
    mixup: ChaCha8Rng,
    jitter: ChaCha8Rng,
}

impl BatchRngs {
    fn new(seed: u64) -> Self {
        Self {
            dropout: stream_rng(seed, Stream::Dropout),
            mixup: stream_rng(seed, Stream::Mixup),
            jitter: stream_rng(seed, Stream::Jitter),
        }
    }
}

/// Epoch loop shared by every trainer. `batch` returns the weighted loss
/// sum and weighted gradient sum over the given sample indices, reduced in
/// index order; the step uses their batch mean.
fn train_loop<F>(
    model: &mut MlpModel,
    n: usize,
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
    mut batch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&MlpModel, &[usize]) -> Result<(f64, Gradients)>,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut shuffle = stream_rng(config.seed, Stream::Shuffle);
    let mut state = SgdState::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let (loss, mut grads) = batch(model, idx)?;
            grads.scale(1.0 / idx.len() as f64);
            loss_sum += loss;
            sgd_step(model, &grads, lr, config.momentum, config.weight_decay, &mut state)?;
        }
        let train_loss = loss_sum / n as f64;
        let params_finite = model.params().iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !train_loss.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let clean_test_acc = match eval {
            Some(test) => Some(accuracy(model, test)?.top1),
            None => None,
        };
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            clean_test_acc,
        });
    }
    Ok(log)
}

fn check_dataset(ds: &SyntheticDataset, model: &MlpModel) -> Result<()> {
    check_dim(model.input_dim, ds.dimension)?;
    check_dim(model.num_classes, ds.num_classes)
}

/// Per-sample gradient of the stage-one objective for one regularizer.
fn stage_one_batch(
    model: &MlpModel,
    ds: &SyntheticDataset,
    idx: &[usize],
    config: &TrainConfig,
    weights: &[f64],
    rngs: &mut BatchRngs,
) -> Result<(f64, Gradients)> {
    let c = ds.num_classes;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(model);
    if config.regularizer == Regularizer::Mixup {
        let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| ds.samples[i].features.clone()).collect();
        let targets: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let w = ds.samples[i].web_label;
                let mut t = one_hot(c, w);
                t.push(weights[w]);
                t
            })
            .collect();
        let mixed = mixup_batch(&inputs, &targets, config.mixup_alpha, &mut rngs.mixup)?;
        for (x, t) in mixed.inputs.iter().zip(&mixed.targets) {
            let mask = dropout_mask(model, rngs);
            let (l, g) = backward(model, x, Objective::SelfLabel { target: &t[..c] }, mask.as_deref())?;
            loss += t[c] * l;
            grads.add_scaled(&g, t[c]);
        }
        return Ok((loss, grads));
    }
    for &i in idx {
        let s = &ds.samples[i];
        let objective = match config.regularizer {
            Regularizer::LabelSmoothing => Objective::LabelSmoothing {
                label: s.web_label,
                eps: config.label_smoothing,
            },
            Regularizer::EntropyReg => Objective::EntropyReg {
                label: s.web_label,
                weight: config.entropy_weight,
            },
            _ => Objective::Web { label: s.web_label },
        };
        let mask = dropout_mask(model, rngs);
        let (l, g) = backward(model, &s.features, objective, mask.as_deref())?;
        let w = weights[s.web_label];
        loss += w * l;
        grads.add_scaled(&g, w);
    }
    Ok((loss, grads))
}

fn dropout_mask(model: &MlpModel, rngs: &mut BatchRngs) -> Option<Vec<f64>> {
    (model.dropout_rate > 0.0).then(|| model.sample_dropout_mask(&mut rngs.dropout))
}

fn train_member(
    ds: &SyntheticDataset,
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(MlpModel, Vec<EpochLog>)> {
    let mut model = MlpModel::init(ds.dimension, config.hidden_dim, ds.num_classes, config.seed)?;
    if config.regularizer == Regularizer::McDropout {
        model = model.with_dropout(config.dropout_rate)?;
    }
    let weights = sample_weights(ds, config)?;
    let mut rngs = BatchRngs::new(config.seed);
    let log = train_loop(&mut model, ds.len(), config, eval, |m, idx| {
        stage_one_batch(m, ds, idx, config, &weights, &mut rngs)
    })?;
    Ok((model, log))
}

/// Trains stage-one model(s) on the web labels from a seeded random
/// initialization. An ensemble trains `ensemble_size` vanilla members with
/// seeds `seed, seed + 1, ...`; its log averages the members epoch by epoch.
pub fn pretrain(
    ds: &SyntheticDataset,
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(Pretrained, Vec<EpochLog>)> {
    config.validate()?;
    ds.validate()?;
    if config.regularizer != Regularizer::Ensemble {
        let (model, log) = train_member(ds, config, eval)?;
        return Ok((
            Pretrained {
                regularizer: config.regularizer,
                members: vec![model],
            },
            log,
        ));
    }
    let mut members = Vec::with_capacity(config.ensemble_size);
    let mut logs = Vec::with_capacity(config.ensemble_size);
    for k in 0..config.ensemble_size {
        let member_cfg = TrainConfig {
            regularizer: Regularizer::Vanilla,
            seed: config.seed.wrapping_add(k as u64),
            ..config.clone()
        };
        let (m, log) = train_member(ds, &member_cfg, eval)?;
        members.push(m);
        logs.push(log);
    }
    let e = logs.len() as f64;
    let log = (0..config.epochs)
        .map(|t| EpochLog {
            epoch: t,
            lr: logs[0][t].lr,
            train_loss: logs.iter().map(|l| l[t].train_loss).sum::<f64>() / e,
            clean_test_acc: logs[0][t]
                .clean_test_acc
                .map(|_| logs.iter().filter_map(|l| l[t].clean_test_acc).sum::<f64>() / e),
        })
        .collect();
    Ok((
        Pretrained {
            regularizer: Regularizer::Ensemble,
            members,
        },
        log,
    ))
}

/// Reads self labels, confidences and hidden features off a stage-one
/// model with eval-mode passes. Ensembles average member predictions and
/// concatenate member features; MC-dropout models average `mc_samples`
/// stochastic passes.
pub fn extract(ds: &SyntheticDataset, pretrained: &Pretrained, config: &TrainConfig) -> Result<StageOneArtifacts> {
    for m in &pretrained.members {
        check_dataset(ds, m)?;
    }
    let c = ds.num_classes;
    let mc = pretrained.regularizer == Regularizer::McDropout && pretrained.primary().dropout_rate > 0.0;
    let mut mc_rng = stream_rng(config.seed, Stream::McDropout);
    let mut probs = Matrix::zeros(ds.len(), c);
    let mut features = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let row = probs.row_mut(i);
        let mut feat = Vec::new();
        if mc {
            let m = pretrained.primary();
            let passes = config.mc_samples;
            for _ in 0..passes {
                let mask = m.sample_dropout_mask(&mut mc_rng);
                let p = m.forward_cached(&s.features, Some(&mask))?.prediction();
                row.iter_mut().zip(&p.probs).for_each(|(acc, v)| *acc += v);
            }
            row.iter_mut().for_each(|v| *v /= passes as f64);
            feat = m.hidden_features(&s.features)?;
        } else {
            for m in &pretrained.members {
                let cache = m.forward_cached(&s.features, None)?;
                let p = cache.prediction();
                row.iter_mut().zip(&p.probs).for_each(|(acc, v)| *acc += v);
                feat.extend(cache.hidden);
            }
            if pretrained.members.len() > 1 {
                let e = pretrained.members.len() as f64;
                row.iter_mut().for_each(|v| *v /= e);
            }
        }
        features.push(feat);
    }
    let scc = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| probs.get(i, s.web_label))
        .collect();
    Ok(StageOneArtifacts {
        model_theta0: pretrained.primary().clone(),
        self_labels: probs,
        features: Matrix::from_rows(features)?,
        scc,
    })
}

/// Stage two with each sample's own confidence.
pub fn finetune(
    ds: &SyntheticDataset,
    artifacts: &StageOneArtifacts,
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(MlpModel, Vec<EpochLog>)> {
    finetune_with_confidence(ds, artifacts, &artifacts.scc, config, eval)
}

/// Stage two with the same confidence `c` for every sample.
pub fn finetune_constant(
    ds: &SyntheticDataset,
    artifacts: &StageOneArtifacts,
    c: f64,
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(MlpModel, Vec<EpochLog>)> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid(format!("constant confidence {c} outside [0, 1]")));
    }
    finetune_with_confidence(ds, artifacts, &vec![c; ds.len()], config, eval)
}

/// Stage two: start from the stage-one model and minimize
/// `w_web * (c_i * web_loss + (1 - c_i) * self_loss)` with frozen self
/// labels and the given confidences.
///
/// Self-label entries outside `[0, 1]` (possible after graph smoothing) are
/// clamped before use as targets. With the mixup regularizer, the web one-hot, self label, confidence and
/// class weight of a pair are all mixed with the same coefficient.
pub fn finetune_with_confidence(
    ds: &SyntheticDataset,
    artifacts: &StageOneArtifacts,
    confidences: &[f64],
    config: &TrainConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(MlpModel, Vec<EpochLog>)> {
    artifacts.check_against(ds)?;
    check_dim(ds.len(), confidences.len())?;
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
    }
    let mut model = artifacts.model_theta0.clone();
    check_dataset(ds, &model)?;
    let weights = sample_weights(ds, config)?;
    let mut rngs = BatchRngs::new(config.seed);
    let c = ds.num_classes;
    // smoothed self labels may leave [0, 1]; targets are clamped here
    let clamped;
    let p = if artifacts.self_labels.as_slice().iter().all(|v| (0.0..=1.0).contains(v)) {
        &artifacts.self_labels
    } else {
        let mut m = artifacts.self_labels.clone();
        for i in 0..m.rows() {
            m.row_mut(i).iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        clamped = m;
        &clamped
    };
    let log = train_loop(&mut model, ds.len(), config, eval, |m, idx| {
        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(m);
        if config.regularizer == Regularizer::Mixup {
            let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| ds.samples[i].features.clone()).collect();
            let targets: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let w = ds.samples[i].web_label;
                    let mut t = one_hot(c, w);
                    t.extend_from_slice(p.row(i));
                    t.push(confidences[i]);
                    t.push(weights[w]);
                    t
                })
                .collect();
            let mixed = mixup_batch(&inputs, &targets, config.mixup_alpha, &mut rngs.mixup)?;
            for (x, t) in mixed.inputs.iter().zip(&mixed.targets) {
                let (web, rest) = t.split_at(c);
                let (self_label, tail) = rest.split_at(c);
                let (conf, w) = (tail[0], tail[1]);
                let blended: Vec<f64> = web
                    .iter()
                    .zip(self_label)
                    .map(|(y, q)| (conf * y + (1.0 - conf) * q).clamp(0.0, 1.0))
                    .collect();
                let mask = dropout_mask(m, &mut rngs);
                let (l, g) = backward(m, x, Objective::SelfLabel { target: &blended }, mask.as_deref())?;
                loss += w * l;
                grads.add_scaled(&g, w);
            }
        } else {
            for &i in idx {
                let s = &ds.samples[i];
                let objective = Objective::Combined {
                    label: s.web_label,
                    target: p.row(i),
                    c: confidences[i],
                };
                let mask = dropout_mask(m, &mut rngs);
                let (l, g) = backward(m, &s.features, objective, mask.as_deref())?;
                let w = weights[s.web_label];
                loss += w * l;
                grads.add_scaled(&g, w);
            }
        }
        Ok((loss, grads))
    })?;
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    pub weight: f64,
    /// Standard deviation of the Gaussian feature jitter for each view.
    pub sigma: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { weight: 1.0, sigma: 0.5 }
    }
}

/// Single-stage baseline: web loss on the clean input plus `weight` times
/// the squared disagreement between two jittered views. With zero weight it
/// reproduces vanilla pretraining exactly.
pub fn train_consistency_baseline(
    ds: &SyntheticDataset,
    config: &TrainConfig,
    consistency: ConsistencyConfig,
    eval: Option<&SyntheticDataset>,
) -> Result<(MlpModel, Vec<EpochLog>)> {
    if !(consistency.weight >= 0.0) || !(consistency.sigma >= 0.0) {
        return Err(Error::invalid("consistency weight and sigma must be non-negative"));
    }
    ds.validate()?;
    let config = TrainConfig {
        regularizer: Regularizer::Vanilla,
        ..config.clone()
    };
    let mut model = MlpModel::init(ds.dimension, config.hidden_dim, ds.num_classes, config.seed)?;
    let weights = sample_weights(ds, &config)?;
    let mut rngs = BatchRngs::new(config.seed);
    let log = train_loop(&mut model, ds.len(), &config, eval, |m, idx| {
        if consistency.weight == 0.0 {
            return stage_one_batch(m, ds, idx, &config, &weights, &mut rngs);
        }
        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(m);
        for &i in idx {
            let s = &ds.samples[i];
            let (mut l, mut g) = backward(m, &s.features, Objective::Web { label: s.web_label }, None)?;
            let mut jitter = |x: &[f64]| -> Vec<f64> {
                x.iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rngs.jitter);
                        v + consistency.sigma * z
                    })
                    .collect()
            };
            let view_a = jitter(&s.features);
            let view_b = jitter(&s.features);
            let (lc, gc) = backward(m, &view_a, Objective::Consistency { other_view: &view_b }, None)?;
            l += consistency.weight * lc;
            g.add_scaled(&gc, consistency.weight);
            let w = weights[s.web_label];
            loss += w * l;
            grads.add_scaled(&g, w);
        }
        Ok((loss, grads))
    })?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{inject_noise, ClusterSpec, NoiseModel};

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 2,
            hidden_dim: 16,
            batch_size: 16,
            ensemble_size: 3,
            mc_samples: 5,
            ..TrainConfig::pretrain()
        }
    }

    fn noisy(spread: f64, rate: f64) -> (SyntheticDataset, SyntheticDataset) {
        let spec = ClusterSpec::new(3, 4, spread, 11);
        let clean = spec.generate(40).unwrap();
        (inject_noise(&clean, NoiseModel::Uniform, rate, 11).unwrap(), spec.generate_test(40).unwrap())
    }

    #[test]
    fn clean_separable_clusters_are_learned() {
        let (ds, test) = noisy(0.3, 0.0);
        let (p, log) = pretrain(&ds, &quick(30), Some(&test)).unwrap();
        assert_eq!(log.len(), 30);
        assert!(accuracy(&p, &test).unwrap().top1 > 0.95);
        assert_eq!(log.last().unwrap().clean_test_acc, Some(accuracy(&p, &test).unwrap().top1));
        assert!(log.last().unwrap().train_loss < log[0].train_loss);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (ds, _) = noisy(1.0, 0.3);
        for r in [Regularizer::Vanilla, Regularizer::Mixup, Regularizer::McDropout] {
            let cfg = quick(4).with_regularizer(r);
            let a = pretrain(&ds, &cfg, None).unwrap();
            let b = pretrain(&ds, &cfg, None).unwrap();
            assert_eq!(a, b, "{r}");
        }
        let other = pretrain(&ds, &quick(4).with_seed(2), None).unwrap();
        assert_ne!(other.0, pretrain(&ds, &quick(4), None).unwrap().0);
    }

    #[test]
    fn ensemble_members_differ() {
        let (ds, _) = noisy(1.0, 0.3);
        let (p, _) = pretrain(&ds, &quick(3).with_regularizer(Regularizer::Ensemble), None).unwrap();
        assert_eq!(p.members.len(), 3);
        assert_ne!(p.members[0], p.members[1]);
        assert_ne!(p.members[1], p.members[2]);
        let solo = pretrain(&ds, &quick(3), None).unwrap().0;
        assert_eq!(p.members[0], solo.members[0]);
    }

    #[test]
    fn every_regularizer_trains_and_extracts() {
        let (ds, _) = noisy(1.0, 0.3);
        for r in Regularizer::ALL {
            let cfg = quick(3).with_regularizer(r);
            let (p, _) = pretrain(&ds, &cfg, None).unwrap();
            let a = extract(&ds, &p, &cfg).unwrap();
            a.check_against(&ds).unwrap();
            for (i, s) in ds.samples.iter().enumerate() {
                assert_eq!(a.scc[i], a.self_labels.get(i, s.web_label));
            }
            assert!(a.scc.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn mc_dropout_without_dropout_matches_eval_pass() {
        let (ds, _) = noisy(1.0, 0.3);
        let cfg = quick(3);
        let (mut p, _) = pretrain(&ds, &cfg, None).unwrap();
        let eval = extract(&ds, &p, &cfg).unwrap();
        p.regularizer = Regularizer::McDropout;
        assert_eq!(extract(&ds, &p, &cfg).unwrap(), eval);
    }

    #[test]
    fn ensemble_of_copies_matches_single_model() {
        let (ds, _) = noisy(1.0, 0.3);
        let cfg = quick(3);
        let (p, _) = pretrain(&ds, &cfg, None).unwrap();
        let single = extract(&ds, &p, &cfg).unwrap();
        let copies = Pretrained {
            regularizer: Regularizer::Ensemble,
            members: vec![p.members[0].clone(); 5],
        };
        let avg = extract(&ds, &copies, &cfg).unwrap();
        for (a, b) in avg.self_labels.as_slice().iter().zip(single.self_labels.as_slice()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b, "{a} vs {b}");
        }
        assert_eq!(avg.features.cols(), 5 * single.features.cols());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (ds, _) = noisy(1.0, 0.3);
        let p = Pretrained {
            regularizer: Regularizer::Vanilla,
            members: vec![MlpModel::init(5, 4, 3, 0).unwrap()],
        };
        assert!(matches!(extract(&ds, &p, &quick(3)), Err(Error::DimensionMismatch { .. })));
    }

    fn stage_one(ds: &SyntheticDataset) -> StageOneArtifacts {
        let cfg = quick(6);
        let (p, _) = pretrain(ds, &cfg, None).unwrap();
        extract(ds, &p, &cfg).unwrap()
    }

    #[test]
    fn all_ones_confidence_equals_constant_one() {
        let (ds, _) = noisy(1.0, 0.3);
        let mut a = stage_one(&ds);
        a.scc = vec![1.0; ds.len()];
        let cfg = TrainConfig { initial_lr: FT_LR, ..quick(4) };
        let (m1, l1) = finetune(&ds, &a, &cfg, None).unwrap();
        let (m2, l2) = finetune_constant(&ds, &a, 1.0, &cfg, None).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
    }

    const FT_LR: f64 = crate::trainer::FINETUNE_LR;

    #[test]
    fn full_confidence_ignores_self_labels() {
        let (ds, _) = noisy(1.0, 0.3);
        let a = stage_one(&ds);
        let mut b = a.clone();
        b.self_labels.row_mut(0).iter_mut().for_each(|v| *v = 0.5);
        b.self_labels.row_mut(7).iter_mut().for_each(|v| *v = 0.0);
        let cfg = quick(4);
        assert_eq!(
            finetune_constant(&ds, &a, 1.0, &cfg, None).unwrap(),
            finetune_constant(&ds, &b, 1.0, &cfg, None).unwrap()
        );
    }

    fn mean_gap(model: &MlpModel, ds: &SyntheticDataset, p: &Matrix) -> f64 {
        let mut total = 0.0;
        for (i, s) in ds.samples.iter().enumerate() {
            let pred = model.class_probs(&s.features).unwrap();
            total += pred.iter().zip(p.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        total / (ds.len() * ds.num_classes) as f64
    }

    #[test]
    fn zero_confidence_drifts_toward_self_labels() {
        let (ds, _) = noisy(1.0, 0.3);
        let mut a = stage_one(&ds);
        // soften the targets so the starting model is far from them
        for i in 0..ds.len() {
            a.self_labels.row_mut(i).iter_mut().for_each(|v| *v = 0.5 * *v + 0.25);
        }
        let before = mean_gap(&a.model_theta0, &ds, &a.self_labels);
        let (m, _) = finetune_constant(&ds, &a, 0.0, &quick(8), None).unwrap();
        let after = mean_gap(&m, &ds, &a.self_labels);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn out_of_range_self_labels_are_clamped_as_targets() {
        let (ds, _) = noisy(1.0, 0.3);
        let a = stage_one(&ds);
        let mut over = a.clone();
        let mut clipped = a.clone();
        over.self_labels.row_mut(3)[0] = 1.2;
        clipped.self_labels.row_mut(3)[0] = 1.0;
        let cfg = quick(3);
        assert_eq!(finetune(&ds, &over, &cfg, None).unwrap(), finetune(&ds, &clipped, &cfg, None).unwrap());
    }

    #[test]
    fn finetune_checks_confidences() {
        let (ds, _) = noisy(1.0, 0.3);
        let a = stage_one(&ds);
        assert!(finetune_constant(&ds, &a, 1.5, &quick(2), None).is_err());
        assert!(finetune_with_confidence(&ds, &a, &[0.5; 3], &quick(2), None).is_err());
    }

    #[test]
    fn mixup_finetune_runs_deterministically() {
        let (ds, _) = noisy(1.0, 0.3);
        let a = stage_one(&ds);
        let cfg = quick(3).with_regularizer(Regularizer::Mixup);
        let x = finetune(&ds, &a, &cfg, None).unwrap();
        assert_eq!(x, finetune(&ds, &a, &cfg, None).unwrap());
        assert_ne!(x.0, finetune(&ds, &a, &quick(3), None).unwrap().0);
    }

    #[test]
    fn consistency_reduces_to_vanilla_at_zero_weight_or_zero_jitter() {
        let (ds, _) = noisy(1.0, 0.3);
        let cfg = quick(4);
        let (vanilla, vlog) = pretrain(&ds, &cfg, None).unwrap();
        for cc in [
            ConsistencyConfig { weight: 0.0, sigma: 0.5 },
            ConsistencyConfig { weight: 1.0, sigma: 0.0 },
        ] {
            let (m, log) = train_consistency_baseline(&ds, &cfg, cc, None).unwrap();
            assert_eq!(m, vanilla.members[0], "{cc:?}");
            assert_eq!(log, vlog);
        }
        let (m, _) = train_consistency_baseline(&ds, &cfg, ConsistencyConfig::default(), None).unwrap();
        assert_ne!(m, vanilla.members[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let (ds, _) = noisy(1.0, 0.3);
        let cfg = TrainConfig {
            initial_lr: 1e200,
            ..quick(3)
        };
        assert!(matches!(pretrain(&ds, &cfg, None), Err(Error::Diverged { .. })));
    }

    #[test]
    fn checkpoint_round_trip_keeps_members() {
        let (ds, _) = noisy(1.0, 0.3);
        let (p, _) = pretrain(&ds, &quick(3).with_regularizer(Regularizer::Ensemble), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path).unwrap();
        assert_eq!(Pretrained::load(&path).unwrap(), p);
    }

    #[test]
    fn log_csv_has_one_row_per_epoch() {
        let (ds, test) = noisy(1.0, 0.3);
        let (_, log) = pretrain(&ds, &quick(5), Some(&test)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        save_log(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("epoch,lr,train_loss,clean_test_acc\n"));
    }
}
