//! Dataset generation, evaluation and reporting around the estimators.

mod dataset;
mod eval;
mod metrics;
mod plan;

pub use dataset::{
    assign_splits, build_dataset, Dataset, DatasetConfig, IterationRecord, RunManifest, Split,
    SplitEntry,
};
pub use eval::{
    evaluate, mean_target_baseline, train_on_dataset, Estimator, Evaluation, MleSettings,
    PredictionRecord,
};
pub use metrics::{
    read_summaries, relative_error, report_tables, write_summaries, ConfigRow, MetricsReport,
    Prediction, ReFractions, RE_THRESHOLDS,
};
pub use plan::ExperimentPlan;
