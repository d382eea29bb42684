//! Training loop, early stopping, the synthetic shapes corpus, and the
//! multi-model comparison report.

pub mod config;
pub mod data;
pub mod early_stop;
pub mod error;
pub mod evaluate;
pub mod report;
pub mod run_dir;
pub mod sgd;
pub mod synth;
pub mod train;

pub use config::{EarlyStopConfig, Metric, Optimizer, TrainConfig};
pub use data::{LoadedSplit, TrainingData};
pub use early_stop::{early_stop_update, Decision, EarlyStopState};
pub use error::{Result, TrainError};
pub use evaluate::{evaluate, Evaluation};
pub use report::{compare, compare_with, reference_table, ComparisonReport, ReportRow, RowOutcome, REPORT_COLUMNS};
pub use run_dir::write_run_dir;
pub use sgd::{sgd_step, Velocity};
pub use synth::{synth_shapes, SHAPE_CLASSES};
pub use train::{train, train_with, Completion, EpochMetrics, RunRecord};
