//! End-to-end studies: simulate, corrupt, subsample, train, predict, evaluate.
//!
//! These functions return in-memory results; the experiments in
//! [`crate::experiments`] turn them into tables.

use std::f64::consts::PI;

use forcegp::gp::MeasurementSet;
use forcegp::oscillator::{
    simulate_response, uniform_step, ForcingSignal, OscillatorParams, ResponseKind, ResponseRecord,
};
use forcegp::predictor::{predict_force, predict_response, superpose_modal, ModalTrack, Posterior, Superposed};
use forcegp::rng::sub_seed;
use forcegp::signal::{corrupt_record, default_segment_len, psd, rmse, subsample, PsdEstimate, SamplingSpec};
use forcegp::trainer::{train, TrainConfig, TrainedModel};
use forcegp::windsim::{
    generate_wind, simulate_buffeting, BuffetingOptions, BuffetingResult, ModalParticipation, SectionAeroParams,
    WindField, WindSpec,
};
use forcegp::{Error, Result};
use rayon::prelude::*;

use crate::config::Span;

// seed streams
const STREAM_NOISE: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_WIND: u64 = 3;

/// Harmonic load `A·sin(2π f t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub duration: f64,
    pub f_s: f64,
}

impl Harmonic {
    /// Unit load at the oscillator's natural frequency.
    pub fn resonant(osc: &OscillatorParams, duration: f64, f_s: f64) -> Self {
        Self {
            amplitude: 1.0,
            frequency_hz: osc.omega_n() / (2.0 * PI),
            duration,
            f_s,
        }
    }

    pub fn signal(&self) -> ForcingSignal {
        let n = (self.duration * self.f_s).round() as usize + 1;
        let w = 2.0 * PI * self.frequency_hz;
        ForcingSignal::from_fn(n, self.f_s, |t| self.amplitude * (w * t).sin())
    }
}

/// Where and how densely posteriors are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGrid {
    pub dt: Option<f64>,
    pub span: Span,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self {
            dt: None,
            span: Span::Training,
        }
    }
}

impl EvalGrid {
    /// Record indices to evaluate at.
    pub fn indices(&self, times: &[f64], data: &MeasurementSet) -> Result<Vec<usize>> {
        let h = uniform_step(times)?;
        let stride = match self.dt {
            None => 1,
            Some(dt) => {
                let r = dt / h;
                let k = r.round();
                if k < 1.0 || (r - k).abs() > 1e-6 * r {
                    return Err(Error::InvalidParameter(format!(
                        "prediction step {dt} s is not a multiple of the record step {h} s"
                    )));
                }
                k as usize
            }
        };
        let (a, b) = match self.span {
            Span::Record => (times[0], times[times.len() - 1]),
            Span::Training => data
                .span()
                .ok_or_else(|| Error::InvalidParameter("no training data to define the span".into()))?,
        };
        let tol = 1e-9 * h;
        let first = times.partition_point(|&t| t < a - tol);
        Ok((first..times.len())
            .take_while(|&i| times[i] <= b + tol)
            .step_by(stride)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdofSetup {
    pub osc: OscillatorParams,
    pub forcing: Harmonic,
    /// `None` for noise-free measurements.
    pub snr: Option<f64>,
    pub sampling: SamplingSpec,
    pub training: TrainConfig,
    pub grid: EvalGrid,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SdofOutcome {
    pub clean: ResponseRecord,
    pub forcing: ForcingSignal,
    pub measured: ResponseRecord,
    pub noise_sigma: Option<[f64; 3]>,
    pub training_indices: Vec<usize>,
    pub model: TrainedModel,
    pub eval_indices: Vec<usize>,
    pub force: Posterior,
    pub force_true: Vec<f64>,
    /// RMSE of the posterior mean, normalized by the peak true force.
    pub rmse: f64,
}

impl SdofOutcome {
    pub fn eval_times(&self) -> Vec<f64> {
        self.eval_indices.iter().map(|&i| self.clean.times[i]).collect()
    }

    /// Fraction of evaluation points whose true force lies in the 95% interval.
    pub fn coverage95(&self) -> f64 {
        coverage95(&self.force, &self.force_true)
    }
}

pub fn coverage95(post: &Posterior, truth: &[f64]) -> f64 {
    let (lo, hi) = post.interval95();
    let inside = truth
        .iter()
        .enumerate()
        .filter(|&(i, &t)| lo[i] <= t && t <= hi[i])
        .count();
    inside as f64 / truth.len() as f64
}

pub fn run_sdof(setup: &SdofSetup) -> Result<SdofOutcome> {
    let forcing = setup.forcing.signal();
    let clean = simulate_response(&setup.osc, &forcing, 0.0, 0.0)?;
    let (measured, noise_sigma) = match setup.snr {
        Some(snr) => {
            let (r, s) = corrupt_record(&clean, snr, sub_seed(setup.seed, STREAM_NOISE))?;
            (r, Some(s))
        }
        None => (clean.clone(), None),
    };
    let training_indices = setup.sampling.indices(&clean.times)?;
    let data = subsample(&measured, &setup.sampling)?;
    let cfg = TrainConfig {
        seed: sub_seed(setup.seed, STREAM_TRAIN),
        ..setup.training.clone()
    };
    let model = train(&setup.osc, &data, &cfg)?;
    let eval_indices = setup.grid.indices(&clean.times, &data)?;
    let times: Vec<f64> = eval_indices.iter().map(|&i| clean.times[i]).collect();
    let force = predict_force(&model, &times)?;
    let force_true: Vec<f64> = eval_indices.iter().map(|&i| forcing.values()[i]).collect();
    let rmse = rmse(&force.mean, &force_true, true)?;
    Ok(SdofOutcome {
        clean,
        forcing,
        measured,
        noise_sigma,
        training_indices,
        model,
        eval_indices,
        force,
        force_true,
        rmse,
    })
}

/// Summary of one replicate of a sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: usize,
    pub replicate: usize,
    pub rmse: f64,
    pub coverage95: f64,
}

/// Seed of replicate `r`; shared across cells so cells differ only in the swept setting.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    sub_seed(base, 1000 + r as u64)
}

/// Runs every `(cell, replicate)` pair on the rayon pool; results come back in
/// cell-major order regardless of scheduling.
pub fn run_grid(setups: &[SdofSetup], replicates: usize, base_seed: u64) -> Result<Vec<CellResult>> {
    let jobs: Vec<(usize, usize)> = (0..setups.len())
        .flat_map(|c| (0..replicates).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let setup = SdofSetup {
                seed: replicate_seed(base_seed, r),
                ..setups[c].clone()
            };
            let out = run_sdof(&setup)?;
            Ok(CellResult {
                cell: c,
                replicate: r,
                rmse: out.rmse,
                coverage95: out.coverage95(),
            })
        })
        .collect()
}

/// Mean, sample standard deviation, min and max.
pub fn summarize(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, sd, min, max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub name: String,
    pub osc: OscillatorParams,
    pub participation: ModalParticipation,
    pub global_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdSettings {
    pub segment: Option<usize>,
    pub overlap: f64,
}

impl Default for PsdSettings {
    fn default() -> Self {
        Self {
            segment: None,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSetup {
    pub aero: SectionAeroParams,
    pub wind: WindSpec,
    pub modes: Vec<ModeSpec>,
    pub snr: f64,
    pub sampling: SamplingSpec,
    pub training: TrainConfig,
    pub grid: EvalGrid,
    pub psd: PsdSettings,
    pub seed: u64,
}

/// Posterior summary without the covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Band {
    pub fn interval95(&self) -> (Vec<f64>, Vec<f64>) {
        let z = forcegp::predictor::Z95;
        let lo = self.mean.iter().zip(&self.std).map(|(m, s)| m - z * s).collect();
        let hi = self.mean.iter().zip(&self.std).map(|(m, s)| m + z * s).collect();
        (lo, hi)
    }
}

impl From<Posterior> for Band {
    fn from(p: Posterior) -> Self {
        Self {
            mean: p.mean,
            std: p.std,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub name: String,
    pub noise_sigma: [f64; 3],
    pub data: MeasurementSet,
    pub model: TrainedModel,
    pub force_true: Vec<f64>,
    pub force: Band,
    pub disp_true: Vec<f64>,
    pub disp: Band,
    pub rmse: f64,
    pub psd_true: PsdEstimate,
    pub psd_pred: PsdEstimate,
}

#[derive(Debug, Clone)]
pub struct BridgeOutcome {
    pub wind: WindField,
    pub sim: BuffetingResult,
    pub eval_indices: Vec<usize>,
    pub eval_times: Vec<f64>,
    pub modes: Vec<ModeOutcome>,
    /// Nyquist frequency of the training sampling interval.
    pub training_nyquist: f64,
    pub global_truth: Vec<f64>,
    pub global: Superposed,
    pub global_rmse: f64,
}

pub fn run_bridge(setup: &BridgeSetup) -> Result<BridgeOutcome> {
    if setup.modes.is_empty() {
        return Err(Error::InvalidParameter("at least one mode is required".into()));
    }
    let wind = generate_wind(&setup.wind, sub_seed(setup.seed, STREAM_WIND))?;
    let oscs: Vec<OscillatorParams> = setup.modes.iter().map(|m| m.osc).collect();
    let map: Vec<ModalParticipation> = setup.modes.iter().map(|m| m.participation).collect();
    let sim = simulate_buffeting(&setup.aero, &oscs, &map, &wind, &BuffetingOptions::default())?;
    let h = uniform_step(&wind.times)?;

    let modes: Vec<ModeOutcome> = (0..setup.modes.len())
        .into_par_iter()
        .map(|j| run_mode(setup, &sim, j, h))
        .collect::<Result<_>>()?;

    let eval_indices = setup.grid.indices(&wind.times, &modes[0].data)?;
    let eval_times: Vec<f64> = eval_indices.iter().map(|&i| wind.times[i]).collect();
    let weights: Vec<f64> = setup.modes.iter().map(|m| m.global_weight).collect();
    let variances: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| m.disp.std.iter().map(|s| s * s).collect())
        .collect();
    let tracks: Vec<ModalTrack> = modes
        .iter()
        .zip(&variances)
        .map(|(m, v)| ModalTrack {
            times: &eval_times,
            mean: &m.disp.mean,
            variance: Some(v),
        })
        .collect();
    let global = superpose_modal(&tracks, &weights)?;
    let global_truth: Vec<f64> = eval_indices
        .iter()
        .map(|&i| sim.records.iter().zip(&weights).map(|(r, w)| w * r.u[i]).sum())
        .collect();
    let global_rmse = if weights.iter().any(|&w| w != 0.0) {
        rmse(&global.mean, &global_truth, true)?
    } else {
        f64::NAN
    };
    let training_nyquist = match &setup.sampling.selection {
        forcegp::signal::Selection::Interval { dt, .. } => 0.5 / dt,
        forcegp::signal::Selection::Indices(_) => f64::NAN,
    };
    Ok(BridgeOutcome {
        wind,
        sim,
        eval_indices,
        eval_times,
        modes,
        training_nyquist,
        global_truth,
        global,
        global_rmse,
    })
}

fn run_mode(setup: &BridgeSetup, sim: &BuffetingResult, j: usize, h: f64) -> Result<ModeOutcome> {
    let spec = &setup.modes[j];
    let record = &sim.records[j];
    let mode_seed = sub_seed(setup.seed, 10 + j as u64);
    let (noisy, noise_sigma) = corrupt_record(record, setup.snr, sub_seed(mode_seed, STREAM_NOISE))?;
    let data = subsample(&noisy, &setup.sampling)?;
    let cfg = TrainConfig {
        seed: sub_seed(mode_seed, STREAM_TRAIN),
        ..setup.training.clone()
    };
    let model = train(&spec.osc, &data, &cfg)?;
    let idx = setup.grid.indices(&record.times, &data)?;
    let times: Vec<f64> = idx.iter().map(|&i| record.times[i]).collect();
    let force: Band = predict_force(&model, &times)?.into();
    let disp: Band = predict_response(&model, &times, ResponseKind::Disp)?.into();
    let force_true: Vec<f64> = idx.iter().map(|&i| sim.forces[j].values()[i]).collect();
    let disp_true: Vec<f64> = idx.iter().map(|&i| record.u[i]).collect();
    let rmse = rmse(&force.mean, &force_true, true)?;
    let step = setup.grid.dt.unwrap_or(h);
    let seg = setup.psd.segment.unwrap_or_else(|| default_segment_len(times.len()));
    let psd_true = psd(&force_true, 1.0 / step, seg, setup.psd.overlap)?;
    let psd_pred = psd(&force.mean, 1.0 / step, seg, setup.psd.overlap)?;
    log::info!("mode {}: normalized force RMSE {rmse:.4}", spec.name);
    Ok(ModeOutcome {
        name: spec.name.clone(),
        noise_sigma,
        data,
        model,
        force_true,
        force,
        disp_true,
        disp,
        rmse,
        psd_true,
        psd_pred,
    })
}
