//! Attention encoder-decoder translation model.

mod checkpoint;
mod config;
mod decode;
pub mod model;
mod params;
mod train;

pub use checkpoint::{average_checkpoints, Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use decode::{DecodeMode, Hypothesis};
pub use model::Seq2Seq;
pub use params::ParameterSet;
pub use train::{pretrain_finetune, train, CurriculumLog, EncodedPair, EvalPoint, Evaluator, TrainConfig, TrainLog};
