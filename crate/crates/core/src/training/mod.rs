//! Alternating discriminator/generator training, persistence and evaluation.

pub mod checkpoint;
mod config;
mod eval;
pub mod log;
mod run;
mod samples;
mod trainer;

pub use config::{parse_channels, parse_key_values, TrainConfig, CONFIG_KEYS};
pub use eval::{evaluate, evaluate_with, psnr, Metrics};
pub use run::{checkpoint_path, dry_run, sample_path, split_mse, train_loop, RunOptions, RunOutcome, Schedule, SAMPLE_IMAGES};
pub use samples::{emit_samples, sample_grid};
pub use trainer::{generator_input, Trainer};
