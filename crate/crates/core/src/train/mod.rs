//! Optimization, the staged schedule, checkpoints and evaluation.

pub mod adam;
pub mod config;
pub mod evaluate;
pub mod schedule;

pub use adam::{adam_step, AdamHyper, OptimizerState};
pub use config::{arch_to_text, load_config, parse_arch, parse_config, TrainConfig};
pub use evaluate::{evaluate, predict_disparity, EvalReport};
pub use schedule::{
    load_checkpoint, run_schedule, run_schedule_with, save_checkpoint, stereo_forward, stereo_loss, EpochRecord, Stage,
    TrainOutcome, LOG_FILE, LOG_HEADER, STAGES,
};
