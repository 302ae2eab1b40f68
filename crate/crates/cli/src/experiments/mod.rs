//! Experiment kinds, registered by name and selected by `experiment.kind`.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

mod ablation;
mod buffeting;
mod reconstruct;
mod sdof;
mod snr_sweep;

pub use ablation::DatatypeAblation;
pub use buffeting::{bridge_setup, Buffeting};
pub use reconstruct::ReconstructFromCsv;
pub use sdof::{sdof_setup, Sdof};
pub use snr_sweep::SnrSweep;

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    /// Checks that the sections this experiment needs are present and valid,
    /// without running anything expensive.
    fn validate(&self, cfg: &RunConfig) -> CliResult<()>;

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()>;
}

#[derive(Default)]
pub struct Registry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All experiments shipped with the tool.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Sdof));
        r.register(Box::new(SnrSweep));
        r.register(Box::new(DatatypeAblation));
        r.register(Box::new(Buffeting));
        r.register(Box::new(ReconstructFromCsv));
        r
    }

    /// Adds an experiment, replacing any previous one with the same name.
    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.entries.insert(e.name(), e);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn resolve(&self, cfg: &RunConfig) -> CliResult<&dyn Experiment> {
        self.get(&cfg.experiment.kind).ok_or_else(|| {
            CliError::Config(format!(
                "unknown experiment kind '{}'; expected one of: {}",
                cfg.experiment.kind,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Probe;

    impl Experiment for Probe {
        fn name(&self) -> &'static str {
            "probe"
        }
        fn summary(&self) -> &'static str {
            "test double"
        }
        fn validate(&self, _: &RunConfig) -> CliResult<()> {
            Ok(())
        }
        fn run(&self, _: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
            ctx.metric("ran", true);
            Ok(())
        }
    }

    #[test]
    fn builtin_names() {
        let r = Registry::builtin();
        assert_eq!(
            r.names().collect::<Vec<_>>(),
            vec![
                "buffeting",
                "datatype-ablation",
                "reconstruct-from-csv",
                "sdof",
                "snr-sweep"
            ]
        );
    }

    #[test]
    fn custom_experiment_is_selected_at_runtime() {
        let mut r = Registry::builtin();
        r.register(Box::new(Probe));
        let cfg = RunConfig::from_toml("[experiment]\nkind = \"probe\"\noutput_dir = \"o\"\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = RunContext::new(dir.path()).unwrap();
        r.resolve(&cfg).unwrap().run(&cfg, &mut ctx).unwrap();
        assert_eq!(ctx.metrics["ran"], true);
    }

    #[test]
    fn unknown_kind_lists_choices() {
        let cfg = RunConfig::from_toml("[experiment]\nkind = \"nope\"\noutput_dir = \"o\"\n").unwrap();
        let err = Registry::builtin().resolve(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("snr-sweep"));
    }
}
