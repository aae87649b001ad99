//! Prompt tuning, evaluation protocols and ablation sweeps.

mod ablation;
mod config;
mod metrics;
mod protocol;
mod tune;

pub use ablation::{
    run_ablation, run_ablation_with, run_pool, worker_count, AblationPlan, AblationReport, AblationRow, AblationSetup, Delta,
    Stat, Variant, WORKERS_ENV,
};
pub use config::{MaskOrigin, MaskStrategy, TrainConfig};
pub use metrics::{
    average_precision, cam_foreground_iou, harmonic_mean, mask_iou, mean_average_precision, EpochRecord,
    MetricsReport,
};
pub use tune::{class_texts, evaluate, tune_prompts, TuneOutcome};
pub use protocol::{run_protocol, score, training_split, Protocol, RunResult};
