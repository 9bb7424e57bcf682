pub mod adapt;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pretext;
pub mod rng;
pub mod signals;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use task::TaskKind;
pub use tensor::{grad_check, Tape, Tensor, Var};
