use std::fmt;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::netcore::loss::{DEFAULT_ENTROPY_WEIGHT, DEFAULT_LABEL_SMOOTHING};
use crate::netcore::model::DEFAULT_HIDDEN;

/// How the stage-one model is regularized, which also decides how its
/// confidences are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    Vanilla,
    LabelSmoothing,
    EntropyReg,
    McDropout,
    Mixup,
    Ensemble,
}

impl Regularizer {
    pub const ALL: [Regularizer; 6] = [
        Regularizer::Vanilla,
        Regularizer::LabelSmoothing,
        Regularizer::EntropyReg,
        Regularizer::McDropout,
        Regularizer::Mixup,
        Regularizer::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regularizer::Vanilla => "vanilla",
            Regularizer::LabelSmoothing => "label_smoothing",
            Regularizer::EntropyReg => "entropy",
            Regularizer::McDropout => "mc_dropout",
            Regularizer::Mixup => "mixup",
            Regularizer::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "vanilla" => Ok(Regularizer::Vanilla),
            "label_smoothing" => Ok(Regularizer::LabelSmoothing),
            "entropy" | "entropy_reg" => Ok(Regularizer::EntropyReg),
            "mc_dropout" => Ok(Regularizer::McDropout),
            "mixup" => Ok(Regularizer::Mixup),
            "ensemble" => Ok(Regularizer::Ensemble),
            other => Err(Error::invalid(format!("unknown regularizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub regularizer: Regularizer,
    pub mixup_alpha: f64,
    pub ensemble_size: usize,
    pub dropout_rate: f64,
    pub class_reweighting: bool,
    pub seed: u64,
    pub hidden_dim: usize,
    pub label_smoothing: f64,
    pub entropy_weight: f64,
    /// Stochastic passes averaged when reading out an MC-dropout model.
    pub mc_samples: usize,
}

pub const PRETRAIN_LR: f64 = 0.1;
pub const FINETUNE_LR: f64 = 0.05;

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    /// Stage-one defaults.
    pub fn pretrain() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            initial_lr: PRETRAIN_LR,
            warmup_epochs: 10,
            momentum: 0.9,
            weight_decay: 1e-4,
            regularizer: Regularizer::Vanilla,
            mixup_alpha: 0.2,
            ensemble_size: 5,
            dropout_rate: 0.5,
            class_reweighting: true,
            seed: 1,
            hidden_dim: DEFAULT_HIDDEN,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            entropy_weight: DEFAULT_ENTROPY_WEIGHT,
            mc_samples: 50,
        }
    }

    /// Stage-two defaults: half the stage-one learning rate, no regularizer.
    pub fn finetune() -> Self {
        Self {
            initial_lr: FINETUNE_LR,
            ..Self::pretrain()
        }
    }

    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        for (name, v) in [
            ("initial_lr", self.initial_lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("entropy_weight", self.entropy_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be a non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if self.regularizer == Regularizer::Mixup && !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive");
        }
        if self.regularizer == Regularizer::Ensemble && self.ensemble_size == 0 {
            return bad("ensemble_size must be positive");
        }
        if self.regularizer == Regularizer::McDropout && self.mc_samples == 0 {
            return bad("mc_samples must be positive");
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 16] = [
        "epochs",
        "batch_size",
        "initial_lr",
        "warmup_epochs",
        "momentum",
        "weight_decay",
        "regularizer",
        "mixup_alpha",
        "ensemble_size",
        "dropout_rate",
        "class_reweighting",
        "seed",
        "hidden_dim",
        "label_smoothing",
        "entropy_weight",
        "mc_samples",
    ];

    /// Overrides fields from `kv`, reading `{prefix}{field}` keys.
    pub fn apply(&mut self, kv: &KvConfig, prefix: &str) -> Result<()> {
        let k = |name: &str| format!("{prefix}{name}");
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get(&k(stringify!($field)))? {
                    self.$field = v;
                }
            };
        }
        take!(epochs);
        take!(batch_size);
        take!(initial_lr);
        take!(warmup_epochs);
        take!(momentum);
        take!(weight_decay);
        take!(regularizer);
        take!(mixup_alpha);
        take!(ensemble_size);
        take!(dropout_rate);
        take!(seed);
        take!(hidden_dim);
        take!(label_smoothing);
        take!(entropy_weight);
        take!(mc_samples);
        if let Some(v) = kv.get_bool(&k("class_reweighting"))? {
            self.class_reweighting = v;
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str, kv: &mut KvConfig) {
        let k = |name: &str| format!("{prefix}{name}");
        kv.set(&k("epochs"), self.epochs);
        kv.set(&k("batch_size"), self.batch_size);
        kv.set(&k("initial_lr"), self.initial_lr);
        kv.set(&k("warmup_epochs"), self.warmup_epochs);
        kv.set(&k("momentum"), self.momentum);
        kv.set(&k("weight_decay"), self.weight_decay);
        kv.set(&k("regularizer"), self.regularizer);
        kv.set(&k("mixup_alpha"), self.mixup_alpha);
        kv.set(&k("ensemble_size"), self.ensemble_size);
        kv.set(&k("dropout_rate"), self.dropout_rate);
        kv.set(&k("class_reweighting"), self.class_reweighting);
        kv.set(&k("seed"), self.seed);
        kv.set(&k("hidden_dim"), self.hidden_dim);
        kv.set(&k("label_smoothing"), self.label_smoothing);
        kv.set(&k("entropy_weight"), self.entropy_weight);
        kv.set(&k("mc_samples"), self.mc_samples);
    }
}
