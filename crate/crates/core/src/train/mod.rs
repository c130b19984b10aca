//! Losses, the optimizer, early stopping and the epoch loop.

mod epochs;
mod loss;
mod optim;

pub use epochs::{evaluate, predict_all, train_loop, EpochRecord, TrainConfig, TrainOutcome, TrainingLog};
pub use loss::{bce_loss, focal_loss, FocalLossConfig, Loss, DEFAULT_CLAMP_EPS};
pub use optim::{adam_step, AdamConfig, AdamState, EarlyStopper, StopDecision};
