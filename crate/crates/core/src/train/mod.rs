//! Focal-loss training with Adam, deterministic batching and the
//! checkpoint format.

mod archive;
mod check;
mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use archive::{TensorArchive, MAGIC};
pub use check::{gradcheck_config, model_grad_check};
pub use checkpoint::{load_checkpoint, read_feature, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION};
pub use loss::{focal_loss, focal_loss_with_grad, normalize_scores, one_hot, score_loss, FocalLossParams, PRED_EPS};
pub use optim::{clip_global_norm, global_norm, AdamState};
pub use trainer::{
    argmax, derive_seed, example_gradient, fit, fit_from, load_examples, train_step, train_step_examples, Example,
    StepOutcome, TrainState,
};
