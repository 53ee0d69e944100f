//! Contrastive fine-tuning: loss, manual backward pass, optimizers, the
//! per-batch step, and the epoch scheduler.

mod config;
mod loss;
mod optimizer;
mod run;
mod step;

pub use config::{OptimizerKind, TrainConfig, TrainMode};
pub use loss::{contrastive_loss, contrastive_loss_backward, LossBackward};
pub use optimizer::{Optimizer, ParamGrads};
pub use run::{epoch_subset, init_state, train_loop, ResumePoint, TrainSummary};
pub use step::{
    latte_forward_backward, resolve_batch, stream_loss_value, train_step, LatteForwardBackward,
    ResolvedBatch, StepReport, TrainerState,
};
