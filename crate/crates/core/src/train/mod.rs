//! Deep-supervised Dice + cross-entropy training with Nesterov SGD and a
//! polynomial learning-rate schedule.

mod config;
pub mod loss;
pub mod optim;
mod trainer;

pub use config::TrainConfig;
pub use loss::{deep_sup_loss, downsample_target, ds_weights, LossParts};
pub use optim::{clip_grad_norm, grad_norm, poly_lr, sgd_nesterov_step};
pub use trainer::{history_csv, train, train_with, EpochRecord, TrainOutcome, HISTORY, HISTORY_HEADER};
