use forcegp::oscillator::ResponseKind;

use super::snr_sweep::{cell_columns, cell_row, summary_columns, summary_row};
use super::{sdof_setup, Experiment};
use crate::config::RunConfig;
use crate::csvio::{col, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;
use crate::pipeline::{run_grid, summarize, CellResult, SdofSetup};

/// Force reconstruction error for different combinations of measured response types.
pub struct DatatypeAblation;

pub fn datatype_label(kinds: &[ResponseKind]) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
}

fn cells(cfg: &RunConfig) -> CliResult<(Vec<String>, Vec<SdofSetup>, usize)> {
    let base = sdof_setup(cfg)?;
    if base.snr.is_none() {
        return Err(CliError::Config("datatype-ablation needs a [noise] section".into()));
    }
    let sweep = cfg.sweep()?;
    if sweep.datatype_sets.is_empty() || sweep.seeds == 0 {
        return Err(CliError::Config(
            "sweep: datatype_sets must be non-empty and seeds >= 1".into(),
        ));
    }
    let mut labels = Vec::new();
    let mut setups = Vec::new();
    for set in &sweep.datatype_sets {
        let mut kinds = set.clone();
        kinds.sort_by_key(|k| k.index());
        kinds.dedup();
        if kinds.is_empty() {
            return Err(CliError::Config("sweep: empty data-type set".into()));
        }
        labels.push(datatype_label(&kinds));
        let mut s = base.clone();
        s.sampling.kinds = kinds;
        setups.push(s);
    }
    Ok((labels, setups, sweep.seeds))
}

impl Experiment for DatatypeAblation {
    fn name(&self) -> &'static str {
        "datatype-ablation"
    }

    fn summary(&self) -> &'static str {
        "oscillator study repeated over sets of measured response types"
    }

    fn validate(&self, cfg: &RunConfig) -> CliResult<()> {
        cells(cfg).map(|_| ())
    }

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
        let (labels, setups, seeds) = cells(cfg)?;
        let base_seed = cfg.experiment.seed;
        let results = ctx.stage("sweep", || run_grid(&setups, seeds, base_seed))?;
        let key = || col("datatypes", "", "measured response types joined by '+'");
        let mut summary = Table::new(
            "rmse_vs_datatypes.csv",
            "Force reconstruction error per data-type set, aggregated over replicates.",
            summary_columns(key()),
        );
        let mut detail = Table::new(
            "rmse_vs_datatypes_cells.csv",
            "Force reconstruction error for every data-type set and replicate.",
            cell_columns(key()),
        );
        let mut means = serde_json::Map::new();
        for (c, label) in labels.iter().enumerate() {
            let group: Vec<&CellResult> = results.iter().filter(|r| r.cell == c).collect();
            means.insert(
                label.clone(),
                summarize(&group.iter().map(|g| g.rmse).collect::<Vec<_>>()).0.into(),
            );
            summary.push(summary_row(label.clone(), &group));
            for g in &group {
                detail.push(cell_row(label.clone(), base_seed, g));
            }
        }
        ctx.metric("rmse_mean_by_datatypes", means);
        ctx.write(&summary)?;
        ctx.write(&detail)
    }
}
