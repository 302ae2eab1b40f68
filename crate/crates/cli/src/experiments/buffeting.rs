use super::Experiment;
use crate::config::{missing, RunConfig};
use crate::csvio::{col, measurement_table, num, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;
use crate::pipeline::{run_bridge, BridgeOutcome, BridgeSetup, EvalGrid, ModeSpec, PsdSettings};

/// Quasi-steady buffeting of a deck section and per-mode force reconstruction.
pub struct Buffeting;

pub fn bridge_setup(cfg: &RunConfig) -> CliResult<BridgeSetup> {
    let aero = cfg.aero.clone().ok_or_else(|| missing("aero"))?;
    aero.validate()?;
    let wind = cfg.wind.ok_or_else(|| missing("wind"))?;
    if cfg.modes.is_empty() {
        return Err(CliError::Config("at least one [[modes]] entry is required".into()));
    }
    let modes = cfg
        .modes
        .iter()
        .enumerate()
        .map(|(j, m)| {
            Ok(ModeSpec {
                name: m.name.clone().unwrap_or_else(|| format!("mode{}", j + 1)),
                osc: m.params()?,
                participation: m.participation,
                global_weight: m.global_weight,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let snr = cfg
        .snr()
        .ok_or_else(|| CliError::Config("buffeting needs a [noise] section".into()))?;
    forcegp::signal::NoiseSpec::new(snr, 0)?;
    Ok(BridgeSetup {
        aero,
        wind,
        modes,
        snr,
        sampling: cfg.sampling()?.spec()?,
        training: cfg.training.train_config(0)?,
        grid: EvalGrid {
            dt: cfg.prediction.dt,
            span: cfg.prediction.span,
        },
        psd: PsdSettings {
            segment: cfg.prediction.psd_segment,
            overlap: cfg.prediction.psd_overlap,
        },
        seed: cfg.experiment.seed,
    })
}

fn write_outputs(setup: &BridgeSetup, out: &BridgeOutcome, ctx: &mut RunContext) -> CliResult<()> {
    let mut w = Table::new(
        "wind.csv",
        "Synthesized turbulence fluctuations about the mean wind speed.",
        vec![
            col("t", "s", "time"),
            col("u", "m/s", "along-wind fluctuation"),
            col("w", "m/s", "vertical fluctuation"),
        ],
    );
    w.push_columns(&[&out.wind.times, &out.wind.u, &out.wind.w]);
    ctx.write(&w)?;

    let mut rm = Table::new(
        "rmse.csv",
        "Per-mode force reconstruction error over the evaluation grid.",
        vec![
            col("mode", "", "1-based mode index"),
            col("name", "", "mode label"),
            col("rmse", "", "force RMSE normalized by the peak true force"),
            col(
                "static_force",
                "N/m",
                "mean-wind modal force removed before integration",
            ),
        ],
    );
    for (j, m) in out.modes.iter().enumerate() {
        let k = j + 1;
        let (lo, hi) = m.force.interval95();
        let mut f = Table::new(
            format!("mode{k}_force.csv"),
            format!(
                "Modal force of {} about static equilibrium: truth and posterior.",
                m.name
            ),
            vec![
                col("t", "s", "time"),
                col("F_true", "N/m", "applied modal force"),
                col("F_mean", "N/m", "posterior mean"),
                col("F_std", "N/m", "posterior standard deviation"),
                col("F_lo95", "N/m", "lower bound of the 95% interval"),
                col("F_hi95", "N/m", "upper bound of the 95% interval"),
            ],
        );
        f.push_columns(&[&out.eval_times, &m.force_true, &m.force.mean, &m.force.std, &lo, &hi]);
        ctx.write(&f)?;

        let mut p = Table::new(
            format!("mode{k}_psd.csv"),
            format!(
                "Welch spectra of the true and posterior-mean modal force of {}.",
                m.name
            ),
            vec![
                col("f", "Hz", "frequency"),
                col("S_FF_true", "N^2/m^2/Hz", "one-sided PSD of the applied force"),
                col("S_FF_pred", "N^2/m^2/Hz", "one-sided PSD of the posterior mean"),
            ],
        );
        p.push_columns(&[&m.psd_true.freqs, &m.psd_true.density, &m.psd_pred.density]);
        ctx.write(&p)?;

        ctx.write(&measurement_table(&format!("mode{k}_training.csv"), &m.data))?;
        rm.push(vec![
            k.to_string(),
            m.name.clone(),
            num(m.rmse),
            num(out.sim.static_forces[j]),
        ]);
    }
    ctx.write(&rm)?;

    if setup.modes.iter().any(|m| m.global_weight != 0.0) {
        let sd = out.global.std();
        let z = forcegp::predictor::Z95;
        let lo: Vec<f64> = out.global.mean.iter().zip(&sd).map(|(m, s)| m - z * s).collect();
        let hi: Vec<f64> = out.global.mean.iter().zip(&sd).map(|(m, s)| m + z * s).collect();
        let mut g = Table::new(
            "global_response.csv",
            "Global displacement from modal superposition with the configured mode-shape ordinates.",
            vec![
                col("t", "s", "time"),
                col("u_true", "m", "superposed true modal displacements"),
                col("u_mean", "m", "superposed posterior means"),
                col("u_std", "m", "standard deviation assuming independent modes"),
                col("u_lo95", "m", "lower bound of the 95% interval"),
                col("u_hi95", "m", "upper bound of the 95% interval"),
            ],
        );
        g.push_columns(&[&out.eval_times, &out.global_truth, &out.global.mean, &sd, &lo, &hi]);
        ctx.write(&g)?;
    }
    Ok(())
}

impl Experiment for Buffeting {
    fn name(&self) -> &'static str {
        "buffeting"
    }

    fn summary(&self) -> &'static str {
        "turbulent wind on a deck section, modal response, per-mode force reconstruction"
    }

    fn validate(&self, cfg: &RunConfig) -> CliResult<()> {
        bridge_setup(cfg).map(|_| ())
    }

    fn run(&self, cfg: &RunConfig, ctx: &mut RunContext) -> CliResult<()> {
        let setup = bridge_setup(cfg)?;
        let out = ctx.stage("simulate+train+predict", || run_bridge(&setup))?;
        for w in &out.wind.warnings {
            ctx.warn(w.clone());
        }
        for m in &out.modes {
            ctx.record_model(m.name.clone(), &m.model);
        }
        ctx.metric("rmse_by_mode", out.modes.iter().map(|m| m.rmse).collect::<Vec<_>>());
        ctx.metric("training_nyquist_hz", out.training_nyquist);
        if out.global_rmse.is_finite() {
            ctx.metric("global_rmse", out.global_rmse);
        }
        write_outputs(&setup, &out, ctx)
    }
}
