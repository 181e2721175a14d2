//! Staged contrastive training, checkpoint merging and negative mining.

pub mod augment;
pub mod config;
pub mod data;
pub mod lora;
pub mod merge;
pub mod mining;
pub mod optim;
pub mod stage;

pub use augment::{augment, AugmentConfig};
pub use config::{StageConfig, TrainMode};
pub use data::TrainingExample;
pub use merge::{merge_checkpoints, merge_models};
pub use mining::{mine_hard_negatives, HashedScorer, LexicalScorer, MiningConfig, Scorer};
pub use optim::AdamW;
pub use stage::{mean_ndcg_at_10, train_stage, Monitor, StageOutcome, StageRunner, StepRecord};
