//! Driver-attribute classification from vehicle telemetry.
//!
//! Raw trips are validated, downsampled to 1 Hz and cut into windows whose
//! per-channel statistics feed a pool of random forests, each trained on a
//! random feature subset. The three best forests are fused per sample with
//! a Choquet integral over an adaptive Sugeno λ-measure.

pub mod artifact;
pub mod bagging;
pub mod cli;
pub mod config;
pub mod decimal;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod pipeline;
pub mod synth;
pub mod telemetry;

pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use telemetry::{BinaryLabel, TripStream};
