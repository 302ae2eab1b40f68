use forcegp::oscillator::ResponseKind;
use forcegp::predictor::{predict_force, predict_response};
use forcegp::rng::sub_seed;
use forcegp::trainer::train;

use super::sdof::posterior_table;
use super::Experiment;
use crate::config::{missing, RunConfig, Span};
use crate::csvio::{col, ingest_csv, ColumnSpec, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

/// Force reconstruction from measurements in a CSV file; no ground truth.
pub struct ReconstructFromCsv;

fn check(cfg: &RunConfig) -> CliResult<(f64, ColumnSpec)> {
    cfg.oscillator()?;
    cfg.training.train_config(0)?;
    let input = cfg.input.as_ref().ok_or_else(|| missing("input"))?;
    let dt = cfg
        .prediction
        .dt
        .ok_or_else(|| CliError::Config("reconstruct-from-csv needs prediction.dt".into()))?;
    if !(dt > 0.0) {
        return Err(CliError::Config("prediction.dt must be positive".into()));
    }
    if cfg.prediction.span != Span::Training {
        return Err(CliError::Config(
            "reconstruct-from-csv only supports span = \"training\"".into(),
        ));
    }
    Ok((dt, input.columns.clone().unwrap_or_default()))
}

impl Experiment for ReconstructFromCsv {
    fn name(&self) -> &'static str {
        "reconstruct-from-csv"
    }

    fn summary(&self) -> &'static str {
        "train on measured responses from a CSV file and write force posteriors"
    }

    fn validate(&self, cfg: &RunConfig) -> CliResult<()> {
        check(cfg).map(|_| ())
    }

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
        let (dt, columns) = check(cfg)?;
        let osc = cfg.oscillator()?;
        let path = &cfg.input.as_ref().unwrap().path;
        let data = ctx.stage("ingest", || ingest_csv(path, &columns))?;
        let tc = cfg.training.train_config(sub_seed(cfg.experiment.seed, 2))?;
        let model = ctx.stage("train", || train(&osc, &data, &tc))?;
        ctx.record_model("measured", &model);

        let (a, b) = data.span().unwrap();
        let n = ((b - a) / dt + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..n).map(|k| a + k as f64 * dt).collect();
        let (force, disp) = ctx.stage("predict", || -> CliResult<_> {
            Ok((
                predict_force(&model, &times)?,
                predict_response(&model, &times, ResponseKind::Disp)?,
            ))
        })?;
        ctx.metric("training_points", data.len());
        ctx.write(&posterior_table("force_posterior.csv", &times, None, &force))?;
        let mut r = Table::new(
            "displacement_posterior.csv",
            "Posterior displacement on the evaluation grid.",
            vec![
                col("t", "s", "time"),
                col("u_mean", "m", "posterior mean displacement"),
                col("u_std", "m", "posterior standard deviation"),
            ],
        );
        r.push_columns(&[&times, &disp.mean, &disp.std]);
        ctx.write(&r)
    }
}
