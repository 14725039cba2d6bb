//! Desk-scale non-autoregressive model, optimizer, synthetic tasks and
//! training loop.

mod model;
mod optim;
mod tasks;
mod train;

pub use model::{inference_input, length_loss, Block, ForwardCache, ForwardOutput, Layout, ToyModel, ToyModelConfig};
pub use optim::{learning_rate, Adam};
pub use tasks::{generate_task_data, target_for, SyntheticTaskSpec, TaskKind, MAX_SHIFT};
pub use train::{train, Pair, StepRecord, TrainOptions, Trainer, TrainingLog, ValidRecord};
