//! Experiment plumbing: the shapes dataset, metrics, configuration, the
//! three-step trainer, evaluation arms and SNR sweeps.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use config::{format_snr, parse_grid, parse_separate, parse_snr, ExperimentConfig, Schedule};
pub use dataset::{Dataset, DatasetConfig, DATA_MAGIC, SHAPE_NAMES};
pub use eval::{evaluate, Arm, EvalMetrics};
pub use metrics::{mean_ap, mean_iou, ConfusionMatrix};
pub use sweep::{min_regret, run_sweep, ArmStores, SweepMeta, SweepReport, SweepRow, CSV_COLUMNS};
pub use train::{train_step, train_three_step, Model, Step, StepLog, TrainOutcome, MTL_PREFIXES};
