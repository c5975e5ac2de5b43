//! Training, checkpoints, evaluation and experiment orchestration.

pub mod checkpoint;
pub mod config;
pub mod diversity;
pub mod evaluate;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use diversity::{run_diversity_experiment, DiversityConfig, DiversitySummary, RunResult};
pub use evaluate::{evaluate_identity, evaluate_model, evaluate_with};
pub use train::{train_model, TrainData, TrainOutcome, Trainer, Utterance};
