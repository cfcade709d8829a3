//! Two-phase training: source-only or unsupervised adaptation, then
//! finetuning on revealed target labels.

mod adam;
mod checkpoint;
mod config;
mod engine;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{MAGIC, VERSION};
pub use config::TrainConfig;
pub use engine::{finetune_target, finetune_trainer, train_da, train_source_only, Phase, PhaseData, PhaseReport, StepRecord, Trainer};
