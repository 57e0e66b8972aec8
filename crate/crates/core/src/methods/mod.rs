//! Continual-learning objectives and the per-task training loop.

mod config;
mod ewc;
mod objectives;
mod train;

pub use config::{MethodConfig, MethodKind};
pub use ewc::{empirical_fisher, ewc_accumulate_fisher, ewc_penalty, EwcState};
pub use objectives::{
    fsr_regularizer, icarl_regularizer, lwf_loss, lwf_penalty, memory_penalty, sample_replay, task_loss, LwfState,
};
pub use train::{
    evaluate, select_memory, EpochMetrics, LrSchedule, MethodState, PlateauTracker, TrainOptions, TrainReport,
};
