use super::{sdof_setup, Experiment};
use crate::config::RunConfig;
use crate::csvio::{col, num, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;
use crate::pipeline::{replicate_seed, run_grid, summarize, CellResult, SdofSetup};

/// Force reconstruction error as a function of measurement SNR.
pub struct SnrSweep;

fn cells(cfg: &RunConfig) -> CliResult<(Vec<f64>, Vec<SdofSetup>, usize)> {
    let base = sdof_setup(cfg)?;
    let sweep = cfg.sweep()?;
    if sweep.snr.is_empty() || sweep.seeds == 0 {
        return Err(CliError::Config("sweep: snr must be non-empty and seeds >= 1".into()));
    }
    if let Some(bad) = sweep.snr.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(CliError::Config(format!(
            "sweep: snr values must be positive, got {bad}"
        )));
    }
    let setups = sweep
        .snr
        .iter()
        .map(|&snr| SdofSetup {
            snr: Some(snr),
            ..base.clone()
        })
        .collect();
    Ok((sweep.snr.clone(), setups, sweep.seeds))
}

pub(crate) fn summary_columns(key: crate::csvio::Column) -> Vec<crate::csvio::Column> {
    vec![
        key,
        col("n_seeds", "", "replicates"),
        col("rmse_mean", "", "mean normalized force RMSE"),
        col("rmse_std", "", "sample standard deviation of the RMSE"),
        col("rmse_min", "", "smallest RMSE"),
        col("rmse_max", "", "largest RMSE"),
        col(
            "coverage95_mean",
            "",
            "mean fraction of true force inside the 95% interval",
        ),
    ]
}

pub(crate) fn summary_row(label: String, results: &[&CellResult]) -> Vec<String> {
    let r: Vec<f64> = results.iter().map(|c| c.rmse).collect();
    let cov: Vec<f64> = results.iter().map(|c| c.coverage95).collect();
    let (mean, sd, lo, hi) = summarize(&r);
    vec![
        label,
        results.len().to_string(),
        num(mean),
        num(sd),
        num(lo),
        num(hi),
        num(summarize(&cov).0),
    ]
}

pub(crate) fn cell_columns(key: crate::csvio::Column) -> Vec<crate::csvio::Column> {
    vec![
        key,
        col("replicate", "", "replicate index"),
        col("seed", "", "replicate seed"),
        col("rmse", "", "normalized force RMSE"),
        col("coverage95", "", "fraction of true force inside the 95% interval"),
    ]
}

pub(crate) fn cell_row(label: String, base_seed: u64, c: &CellResult) -> Vec<String> {
    vec![
        label,
        c.replicate.to_string(),
        replicate_seed(base_seed, c.replicate).to_string(),
        num(c.rmse),
        num(c.coverage95),
    ]
}

impl Experiment for SnrSweep {
    fn name(&self) -> &'static str {
        "snr-sweep"
    }

    fn summary(&self) -> &'static str {
        "oscillator study repeated over a grid of SNRs and seeds"
    }

    fn validate(&self, cfg: &RunConfig) -> CliResult<()> {
        cells(cfg).map(|_| ())
    }

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
        let (snrs, setups, seeds) = cells(cfg)?;
        let base_seed = cfg.experiment.seed;
        let results = ctx.stage("sweep", || run_grid(&setups, seeds, base_seed))?;

        let mut summary = Table::new(
            "rmse_vs_snr.csv",
            "Force reconstruction error per SNR, aggregated over replicates.",
            summary_columns(col("snr", "", "signal-to-noise ratio (RMS based)")),
        );
        let mut detail = Table::new(
            "rmse_vs_snr_cells.csv",
            "Force reconstruction error for every SNR and replicate.",
            cell_columns(col("snr", "", "signal-to-noise ratio (RMS based)")),
        );
        let mut means = Vec::new();
        for (c, &snr) in snrs.iter().enumerate() {
            let group: Vec<&CellResult> = results.iter().filter(|r| r.cell == c).collect();
            let row = summary_row(num(snr), &group);
            means.push(summarize(&group.iter().map(|g| g.rmse).collect::<Vec<_>>()).0);
            summary.push(row);
            for g in &group {
                detail.push(cell_row(num(snr), base_seed, g));
            }
        }
        ctx.metric("rmse_mean_by_snr", &means);
        ctx.write(&summary)?;
        ctx.write(&detail)
    }
}
