use forcegp::predictor::Posterior;

use super::Experiment;
use crate::config::RunConfig;
use crate::csvio::{col, measurement_table, num, Table};
use crate::error::CliResult;
use crate::manifest::RunContext;
use crate::pipeline::{run_sdof, EvalGrid, Harmonic, SdofOutcome, SdofSetup};

/// Single oscillator under a harmonic load.
pub struct Sdof;

/// Builds the single-oscillator study from `[oscillator]`, `[forcing]`,
/// `[noise]`, `[sampling]`, `[training]` and `[prediction]`.
pub fn sdof_setup(cfg: &RunConfig) -> CliResult<SdofSetup> {
    let osc = cfg.oscillator()?;
    let f = cfg.forcing()?;
    f.samples()?;
    let forcing = Harmonic {
        amplitude: f.amplitude,
        frequency_hz: f.frequency_hz.unwrap_or(osc.omega_n() / (2.0 * std::f64::consts::PI)),
        duration: f.duration,
        f_s: f.f_s,
    };
    if let Some(snr) = cfg.snr() {
        forcegp::signal::NoiseSpec::new(snr, 0)?;
    }
    Ok(SdofSetup {
        osc,
        forcing,
        snr: cfg.snr(),
        sampling: cfg.sampling()?.spec()?,
        training: cfg.training.train_config(0)?,
        grid: EvalGrid {
            dt: cfg.prediction.dt,
            span: cfg.prediction.span,
        },
        seed: cfg.experiment.seed,
    })
}

pub(crate) fn posterior_table(file: &str, times: &[f64], truth: Option<&[f64]>, post: &Posterior) -> Table {
    let (lo, hi) = post.interval95();
    let mut cols = vec![col("t", "s", "time")];
    if truth.is_some() {
        cols.push(col("F_true", "N", "applied force"));
    }
    cols.extend([
        col("F_mean", "N", "posterior mean force"),
        col("F_std", "N", "posterior standard deviation"),
        col("F_lo95", "N", "lower bound of the 95% interval"),
        col("F_hi95", "N", "upper bound of the 95% interval"),
    ]);
    let mut t = Table::new(file, "Posterior force on the evaluation grid.", cols);
    match truth {
        Some(tr) => t.push_columns(&[times, tr, &post.mean, &post.std, &lo, &hi]),
        None => t.push_columns(&[times, &post.mean, &post.std, &lo, &hi]),
    }
    t
}

pub(crate) fn write_sdof_outputs(out: &SdofOutcome, ctx: &mut RunContext) -> CliResult<()> {
    let times = out.eval_times();

    let mut ts = Table::new(
        "sdof_timeseries.csv",
        "Full displacement record, training-point flags, true force and posterior mean (blank outside the evaluation grid).",
        vec![
            col("t", "s", "time"),
            col("u_true", "m", "noise-free displacement"),
            col("tp_flag", "", "1 where the sample is a training point"),
            col("F_true", "N", "applied force"),
            col("F_mean", "N", "posterior mean force"),
        ],
    );
    let mut tp = vec![false; out.clean.len()];
    for &i in &out.training_indices {
        tp[i] = true;
    }
    let mut fmean = vec![None; out.clean.len()];
    for (k, &i) in out.eval_indices.iter().enumerate() {
        fmean[i] = Some(out.force.mean[k]);
    }
    for i in 0..out.clean.len() {
        ts.push(vec![
            num(out.clean.times[i]),
            num(out.clean.u[i]),
            (tp[i] as u8).to_string(),
            num(out.forcing.values()[i]),
            fmean[i].map(num).unwrap_or_default(),
        ]);
    }
    ctx.write(&ts)?;
    ctx.write(&posterior_table(
        "force_posterior.csv",
        &times,
        Some(&out.force_true),
        &out.force,
    ))?;
    ctx.write(&measurement_table("training_data.csv", &out.model.data))?;

    let mut r = Table::new(
        "rmse.csv",
        "Force reconstruction error over the evaluation grid.",
        vec![
            col("quantity", "", "reconstructed signal"),
            col("rmse", "", "RMSE normalized by the peak true value"),
            col("coverage95", "", "fraction of true values inside the 95% interval"),
        ],
    );
    r.push(vec!["force".into(), num(out.rmse), num(out.coverage95())]);
    ctx.write(&r)?;
    Ok(())
}

impl Experiment for Sdof {
    fn name(&self) -> &'static str {
        "sdof"
    }

    fn summary(&self) -> &'static str {
        "harmonic load on one oscillator: simulate, sample, train, reconstruct the force"
    }

    fn validate(&self, cfg: &RunConfig) -> CliResult<()> {
        sdof_setup(cfg).map(|_| ())
    }

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
        let setup = sdof_setup(cfg)?;
        let out = ctx.stage("simulate+train+predict", || run_sdof(&setup))?;
        ctx.record_model("sdof", &out.model);
        ctx.metric("rmse", out.rmse);
        ctx.metric("coverage95", out.coverage95());
        ctx.metric("max_force_std", out.force.std.iter().cloned().fold(0.0, f64::max));
        ctx.metric("training_points", out.model.data.len());
        if let Some(s) = out.noise_sigma {
            ctx.metric("noise_sigma", s);
        }
        write_sdof_outputs(&out, ctx)
    }
}
