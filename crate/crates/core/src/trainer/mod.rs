//! Two-stage training: stage one on web labels, stage two on the
//! confidence-balanced mix of web and self labels.

pub mod artifacts;
pub mod config;
pub mod mixup;
pub mod optim;
pub mod stages;

pub use artifacts::StageOneArtifacts;
pub use config::{Regularizer, TrainConfig, FINETUNE_LR, PRETRAIN_LR};
pub use mixup::{mixup_batch, MixedBatch};
pub use optim::{class_weights, lr_at, sgd_step, SgdState};
pub use stages::{
    extract, finetune, finetune_constant, finetune_with_confidence, pretrain, save_log, train_consistency_baseline,
    ConsistencyConfig, EpochLog, Pretrained,
};
