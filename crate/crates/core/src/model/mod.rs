//! Single-logit residual classifier and its training loop.

pub mod data;
mod loss;
mod resnet;
mod schedule;
mod sgd;
mod train;

pub use data::{load_split, masked_chw, stack_images, SplitTensors};
pub use loss::{bce_with_logits, bce_with_logits_grad, bce_with_logits_mean, sigmoid, ModelOutput};
pub use resnet::{build_model, BackboneConfig, Classifier, WeightSource};
pub use schedule::{lr_at_epoch, Normalization, TrainConfig};
pub use sgd::{sgd_step, MomentumSgd};
pub use train::{
    evaluate_split, fingerprint, load_checkpoint, predict_logits, read_history, train,
    train_fingerprint, write_history, Checkpoint, CheckpointMeta, EpochRecord, DECISION_THRESHOLD,
};
