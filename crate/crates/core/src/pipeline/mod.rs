//! End-to-end hiding model, training, evaluation and persistence.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use config::ArdisConfig;
pub use data::{load_dataset, synthetic_image};
pub use eval::{evaluate_pair, teacher_forced_secret_psnr, PairResult};
pub use model::{HideOutput, LossTerms, Model, RevealOutput, LOSS_TERMS};
pub use train::{train, LogRow, TrainOptions, Trainer};
