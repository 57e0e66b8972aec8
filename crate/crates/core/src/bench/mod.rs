//! Sequential-experiment orchestration, metrics and figure data.

mod config;
mod data;
mod metrics;
mod output;
mod run;
pub mod svg;

pub use config::{
    apply_override, ArmGrid, DataSpec, EvalConfig, ExperimentConfig, ExperimentFile, MemoryConfig, ModelConfig,
    StreamSpec, TrainConfig,
};
pub use data::{build_stream, hold_out_per_class, load_splits, synthetic_dataset};
pub use metrics::{
    average_accuracy, delta_loss, first_task_accuracy, forgetting_ratio, logit_stats, mean_stderr,
    prediction_heatmap, LogitStats, MetricsLog, RhoReport,
};
pub use output::{
    build_report, logit_bar_svgs, manifest_for, run_dir, write_partial, write_run, ArmSummary, Manifest, Report,
    RunMetrics, RunStatus, MANIFEST, METRICS,
};
pub use run::{
    joint_reference, memory_plan, prepare_stream, run_sequence, run_sequence_on, weight_count, Heatmap,
    RunArtifacts, TaskFingerprint,
};
