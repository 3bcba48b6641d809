//! Batch commands running the segmentation pipeline stage by stage:
//! `synth` → `annotate` → `train` (binary, multiclass, siamese) →
//! `infer` / `eval`, plus `bench` for inference throughput.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod provenance;

pub use config::{LoadedConfig, PipelineConfig};
pub use error::{CliError, CliResult};
