//! Configuration, data, checkpoints, training loops, inference and
//! evaluation.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod restore;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointKind};
pub use config::{ExtractorKind, LabelSource, PipelineConfig, TrainConfig};
pub use dataset::{synthetic_face, Batch, Dataset, PreparedDataset, Sample};
pub use evaluate::{evaluate_dirs, report_csv, EvalRow};
pub use restore::{dump_pyramid, Restoration, Restorer};
pub use train::{load_fpn, load_generator, FpnStepLog, FpnTrainer, Phase, PsfrStepLog, PsfrTrainer, RunOptions};
