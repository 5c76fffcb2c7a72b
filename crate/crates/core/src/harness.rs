//! Experiment orchestration: configuration, checkpoints, metrics, and the
//! actor/learner/evaluator loops for pre-training and transfer runs.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use metrics::{emit_metrics, EvalRow, RunRecord};
pub use run::{evaluate, pretrain_run, transfer_run, EvalSummary};
