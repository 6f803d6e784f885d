//! Run configuration, checkpoints, metrics, and the staged training and
//! evaluation driver.

mod checkpoint;
mod config;
mod metrics;
mod run;

pub use checkpoint::{Checkpoint, Stage};
pub use config::{EvalConfig, RunConfig, FULL_SCALE_GEN_LR, FULL_SCALE_SIDE, SEED_ENV};
pub use metrics::{clip_score, psnr, MetricsReport};
pub use run::{attribute_agreement, oracle_match_rate, Pipeline};
