//! Layers and the shared-trunk model: a small convolutional backbone with two
//! batch-norm layers, a main classification head and one head per pretext task.

mod check;
mod checkpoint;
mod layers;
mod model;

pub use check::{gradient_suite, narrow, GradCheckEntry};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{linear_forward, BatchNorm, Linear, Mode};
pub use model::{Backbone, Head, ModelConfig, ModelState, ModelVars, ParamGroup, ParamMut, ParamRef, Snapshot, Trainable};
