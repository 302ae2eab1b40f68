//! Command-line front end for `forcegp`: configuration, CSV and manifest I/O,
//! and the experiment runner.
//!
//! A run reads a TOML config, looks up `experiment.kind` in the
//! [`experiments::Registry`], executes it, and writes tidy CSV tables plus a
//! `manifest.json` into `experiment.output_dir`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csvio;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod pipeline;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use experiments::{Experiment, Registry};

/// Parses `path` and checks it against the selected experiment.
pub fn validate_file(path: &Path, registry: &Registry) -> CliResult<RunConfig> {
    let (cfg, _) = RunConfig::load(path)?;
    registry.resolve(&cfg)?.validate(&cfg)?;
    Ok(cfg)
}

/// Runs the experiment described by `path`; returns the manifest path.
/// `output_override` replaces `experiment.output_dir`.
pub fn run_file(path: &Path, output_override: Option<&Path>, registry: &Registry) -> CliResult<PathBuf> {
    let (mut cfg, text) = RunConfig::load(path)?;
    if let Some(o) = output_override {
        cfg.experiment.output_dir = o.to_path_buf();
    }
    let exp = registry.resolve(&cfg)?;
    exp.validate(&cfg)?;
    log::info!("running {} -> {}", exp.name(), cfg.experiment.output_dir.display());
    let mut ctx = manifest::RunContext::new(&cfg.experiment.output_dir)?;
    exp.run(&cfg, &mut ctx)?;
    manifest::write_manifest(&ctx, &cfg, &text)
}
