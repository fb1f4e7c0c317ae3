//! Run configuration, training loop, checkpoints and the baseline comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod report;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointInfo, CheckpointMeta};
pub use compare::{compare_peft, compare_table, default_methods, CompareRow};
pub use config::{DataConfig, ModelSection, Preset, RunConfig, TrainConfig, TuningMode};
pub use report::{ablation_table, parameter_ablation, AblationRow};
pub use trainer::{evaluate, loss_ratios, train, Evaluation, LogKind, LogRecord, StepStats, TrainOutcome, Trainer};
