//! Small sigmoid-output classifier, its losses and their gradients.

pub mod checkpoint;
pub mod grad;
pub mod loss;
pub mod model;

pub use checkpoint::Checkpoint;
pub use grad::{backward, gradient_check, GradCheckReport, Gradients, Objective};
pub use loss::{
    entropy_penalty, loss_combined, loss_consistency, loss_entropy_reg, loss_label_smoothing, loss_self, loss_web,
    smoothed_target, LossBreakdown,
};
pub use model::{argmax, Classifier, MlpModel, Mode, Prediction, PROB_EPS};
