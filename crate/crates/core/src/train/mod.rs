//! Optimizer, training loop, evaluation, α grid search and checkpoints.

mod adam;
mod checkpoint;
mod eval;
mod grid;
mod model;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{aggregate_by_utterance, argmax, evaluate, predict_scores, EvalReport, ScoreRows};
pub use grid::{alpha_grid, grid_search_alpha, GridConfig, GridReport, GridRow};
pub use model::{batch_loss, forward, BatchInputs, ForwardOut, LossVars, ModelConfig};
pub use trainer::{curve_csv, train, train_with_progress, EpochRecord, TrainConfig, TrainOutcome};
