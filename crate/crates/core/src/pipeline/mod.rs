//! Training: optimizers, the multi-task objective, masked-reconstruction
//! pretraining and Stage-I fine-tuning.

mod finetune;
mod loss;
mod optim;
mod pretrain;

pub use finetune::{finetune_stage1, monitor_metric, predict, EpochRecord, FinetuneConfig, FinetuneLog};
pub use loss::{combined_loss, cross_entropy, weighted_ssl_sum};
pub use optim::{AdamParams, Optimizer, OptimizerKind};
pub use pretrain::{masked_mse, masked_pretrain, PretrainConfig, PretrainLog};
