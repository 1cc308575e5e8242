//! Desk-scale detector training with hand-written gradients.

mod audit;
mod backbone;
mod conv;
mod gradcheck;
mod loss;
mod train;

pub use audit::{audit_backbone_spec, backbone_instance, run_gradient_audit, AuditCheck, AuditResult};
pub use backbone::{BackboneOutput, BackboneSpec, ReluMasks, TinyBackbone};
pub use conv::{Conv2d, Tensor};
pub use gradcheck::{compare_gradients, grad_check, numeric_gradient, relative_error, GradCheck};
pub use loss::{bce_with_logits, sigmoid, smooth_l1, SMOOTH_L1_BETA};
pub use train::{
    compare_runs, compare_summaries, synthetic_splits, toy_anchor_spec, train_toy_detector,
    CompareTable, EpochLoss, EvalPoint, LossParts, RunReport, SceneStep, Trainer, TrainConfig,
    TOY_CATEGORY,
};
