//! Maximum likelihood hyperparameters by multi-start BFGS.
//!
//! The optimizer minimizes the negative log marginal likelihood over log-transformed
//! parameters. Each restart starts from a log-uniform draw inside the configured
//! ranges and uses a backtracking Armijo line search; the inverse-Hessian update is
//! skipped whenever the curvature condition `sᵀy > 0` fails.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    factorize_model, from_log_vector, log_marginal_likelihood_free, FactoredCovariance, Hyperparameters,
    MeasurementSet, ParamId,
};
use crate::kernels::KernelParams;
use crate::oscillator::{OscillatorParams, ResponseKind};
use crate::rng::{rng_from, sub_seed};

/// Log-uniform sampling interval in natural units.
pub type Interval = (f64, f64);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitRanges {
    pub sigma_s: Option<Interval>,
    pub ell: Option<Interval>,
    pub noise_disp: Option<Interval>,
    pub noise_vel: Option<Interval>,
    pub noise_acc: Option<Interval>,
}

impl InitRanges {
    fn noise(&self, kind: ResponseKind) -> Option<Interval> {
        match kind {
            ResponseKind::Disp => self.noise_disp,
            ResponseKind::Vel => self.noise_vel,
            ResponseKind::Acc => self.noise_acc,
        }
    }
}

/// Noise standard deviations held fixed instead of optimized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedNoise {
    pub disp: Option<f64>,
    pub vel: Option<f64>,
    pub acc: Option<f64>,
}

impl FixedNoise {
    pub fn get(&self, kind: ResponseKind) -> Option<f64> {
        match kind {
            ResponseKind::Disp => self.disp,
            ResponseKind::Vel => self.vel,
            ResponseKind::Acc => self.acc,
        }
    }

    /// Every type fixed to zero noise.
    pub fn noise_free() -> Self {
        Self {
            disp: Some(0.0),
            vel: Some(0.0),
            acc: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence threshold on the log-space gradient infinity-norm.
    pub grad_tolerance: f64,
    pub init_ranges: InitRanges,
    pub fixed_noise: FixedNoise,
    pub seed: u64,
    /// Run restarts on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 200,
            grad_tolerance: 1e-6,
            init_ranges: InitRanges::default(),
            fixed_noise: FixedNoise::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::Config("grad_tolerance must be > 0".into()));
        }
        let r = &self.init_ranges;
        for (name, iv) in [
            ("sigma_s", r.sigma_s),
            ("ell", r.ell),
            ("noise_disp", r.noise_disp),
            ("noise_vel", r.noise_vel),
            ("noise_acc", r.noise_acc),
        ] {
            if let Some((lo, hi)) = iv {
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::Config(format!(
                        "init range for {name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                    )));
                }
            }
        }
        for k in ResponseKind::ALL {
            if let Some(s) = self.fixed_noise.get(k) {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::Config(format!("fixed noise for {} must be >= 0", k.name())));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a single restart.
#[derive(Debug, Clone, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub initial_likelihood: Option<f64>,
    pub final_likelihood: Option<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainDiagnostics {
    pub restart: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub free_params: Vec<String>,
    pub restarts: Vec<RestartSummary>,
}

/// Hyperparameters together with everything needed for prediction.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub theta: Hyperparameters,
    pub osc: OscillatorParams,
    pub data: MeasurementSet,
    pub factored: Option<FactoredCovariance>,
    /// `K⁻¹·y`.
    pub alpha: DVector<f64>,
    pub final_likelihood: f64,
    pub diagnostics: Option<TrainDiagnostics>,
}

impl TrainedModel {
    /// Conditions on `data` with given hyperparameters; no optimization.
    pub fn from_hyperparameters(theta: Hyperparameters, osc: OscillatorParams, data: MeasurementSet) -> Result<Self> {
        theta.check_against(&data)?;
        if data.is_empty() {
            return Ok(Self {
                theta,
                osc,
                data,
                factored: None,
                alpha: DVector::zeros(0),
                final_likelihood: 0.0,
                diagnostics: None,
            });
        }
        let fac = factorize_model(&theta, &data)?;
        let y = data.stacked_values();
        let alpha = fac.solve(&y);
        let final_likelihood =
            -0.5 * y.dot(&alpha) - 0.5 * fac.log_det() - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            theta,
            osc,
            data,
            factored: Some(fac),
            alpha,
            final_likelihood,
            diagnostics: None,
        })
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.as_ref().is_none_or(|d| d.converged)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Scale-aware default intervals; explicit entries in `cfg` take precedence.
pub fn resolve_init_ranges(osc: &OscillatorParams, data: &MeasurementSet, cfg: &InitRanges) -> Result<InitRanges> {
    let (t0, t1) = data.span().ok_or_else(|| Error::Config("no training data".into()))?;
    let span = (t1 - t0).max(f64::MIN_POSITIVE);
    let gaps: Vec<f64> = data
        .kinds()
        .into_iter()
        .flat_map(|k| {
            let t = &data.channel(k).unwrap().times;
            t.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
        })
        .collect();
    let dt_med = median(gaps).unwrap_or(span);

    // amplitude scale of the displacement, inferred from the oscillator when
    // only derivatives are measured
    let w = osc.omega_n();
    let scale = [
        (ResponseKind::Disp, 1.0),
        (ResponseKind::Vel, w),
        (ResponseKind::Acc, w * w),
    ]
    .into_iter()
    .find_map(|(k, div)| {
        data.channel(k)
            .map(|c| std_dev(&c.values) / div)
            .filter(|s| *s > 0.0 && s.is_finite())
    })
    .unwrap_or(1.0);

    let mut out = cfg.clone();
    out.ell.get_or_insert((0.1 * dt_med, 10.0 * span));
    out.sigma_s.get_or_insert((0.1 * scale, 10.0 * scale));
    for k in data.kinds() {
        let c = data.channel(k).unwrap();
        let s = std_dev(&c.values);
        let s = if s > 0.0 { s } else { 1.0 };
        let slot = match k {
            ResponseKind::Disp => &mut out.noise_disp,
            ResponseKind::Vel => &mut out.noise_vel,
            ResponseKind::Acc => &mut out.noise_acc,
        };
        slot.get_or_insert((1e-4 * s, s));
    }
    Ok(out)
}

fn sample_log_uniform(rng: &mut impl Rng, (lo, hi): Interval) -> f64 {
    if hi <= lo {
        return lo.ln();
    }
    rng.random_range(lo.ln()..hi.ln())
}

struct Problem<'a> {
    data: &'a MeasurementSet,
    base: Hyperparameters,
    free: Vec<ParamId>,
}

impl Problem<'_> {
    /// Negative log-likelihood and (optionally) its gradient at log-coordinates `x`.
    fn eval(&self, x: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>)> {
        if x.iter().any(|v| !v.is_finite() || v.abs() > 700.0) {
            return None;
        }
        let theta = from_log_vector(&self.base, &self.free, x).ok()?;
        let l = log_marginal_likelihood_free(&theta, self.data, &self.free, want_grad).ok()?;
        if !l.value.is_finite() || l.gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((-l.value, l.gradient.into_iter().map(|g| -g).collect()))
    }
}

struct BfgsResult {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_STEP: f64 = 3.0;
const MAX_BACKTRACKS: usize = 40;

fn bfgs(problem: &Problem, x0: Vec<f64>, f0: f64, g0: Vec<f64>, cfg: &TrainConfig, restart: usize) -> BfgsResult {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut f = f0;
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < cfg.max_iters {
        let gn = inf_norm(&g);
        if gn <= cfg.grad_tolerance {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f,
                iterations,
                grad_norm: gn,
                converged: true,
            };
        }
        iterations += 1;

        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            h_is_identity = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        let dn = inf_norm(&d);
        if dn > MAX_STEP {
            d *= MAX_STEP / dn;
            slope *= MAX_STEP / dn;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + step * &d;
            if let Some((ft, _)) = problem.eval(trial.as_slice(), false) {
                if ft <= f + ARMIJO_C1 * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }

        let Some(x_new) = accepted.and_then(|xn| problem.eval(xn.as_slice(), true).map(|(fv, gv)| (xn, fv, gv))) else {
            if h_is_identity {
                break;
            }
            h = DMatrix::identity(n, n);
            h_is_identity = true;
            continue;
        };
        let (x_new, f_new, g_new) = x_new;
        let g_new = DVector::from_vec(g_new);

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if h_is_identity {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(-rho, &s, &hy, 1.0);
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            h_is_identity = false;
        }

        let improvement = f - f_new;
        log::debug!(
            "restart {restart} iter {iterations} loglik {:.10e} grad_inf {:.3e}",
            -f_new,
            inf_norm(&g_new)
        );
        if improvement <= 1e-14 * f.abs().max(1.0) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        if stalls >= 5 {
            break;
        }
    }
    let gn = inf_norm(&g);
    BfgsResult {
        x: x.as_slice().to_vec(),
        f,
        iterations,
        grad_norm: gn,
        converged: gn <= cfg.grad_tolerance,
    }
}

/// Maximizes the log marginal likelihood over free hyperparameters.
pub fn train(osc: &OscillatorParams, data: &MeasurementSet, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 data points, got {}",
            data.len()
        )));
    }
    let ranges = resolve_init_ranges(osc, data, &cfg.init_ranges)?;

    let mut free = vec![ParamId::SigmaS, ParamId::Ell];
    let mut base = Hyperparameters::new(KernelParams::new(1.0, 1.0)?);
    for k in data.kinds() {
        match cfg.fixed_noise.get(k) {
            Some(s) => *base.noise_mut(k) = Some(s),
            None => {
                *base.noise_mut(k) = Some(1.0);
                free.push(ParamId::Noise(k));
            }
        }
    }
    let problem = Problem {
        data,
        base,
        free: free.clone(),
    };

    let run = |r: usize| -> (RestartSummary, Option<BfgsResult>) {
        let mut rng = rng_from(sub_seed(cfg.seed, r as u64));
        let x0: Vec<f64> = free
            .iter()
            .map(|p| {
                let iv = match p {
                    ParamId::SigmaS => ranges.sigma_s.unwrap(),
                    ParamId::Ell => ranges.ell.unwrap(),
                    ParamId::Noise(k) => ranges.noise(*k).unwrap(),
                };
                sample_log_uniform(&mut rng, iv)
            })
            .collect();
        match problem.eval(&x0, true) {
            None => (
                RestartSummary {
                    restart: r,
                    initial_likelihood: None,
                    final_likelihood: None,
                    iterations: 0,
                    grad_norm: f64::NAN,
                    converged: false,
                    failure: Some("likelihood not finite or covariance not factorizable at start point".into()),
                },
                None,
            ),
            Some((f0, g0)) => {
                let res = bfgs(&problem, x0, f0, g0, cfg, r);
                (
                    RestartSummary {
                        restart: r,
                        initial_likelihood: Some(-f0),
                        final_likelihood: Some(-res.f),
                        iterations: res.iterations,
                        grad_norm: res.grad_norm,
                        converged: res.converged,
                        failure: None,
                    },
                    Some(res),
                )
            }
        }
    };

    let outcomes: Vec<(RestartSummary, Option<BfgsResult>)> = if cfg.parallel {
        (0..cfg.restarts).into_par_iter().map(run).collect()
    } else {
        (0..cfg.restarts).map(run).collect()
    };

    // argmax likelihood, ties to the lowest restart index
    let best = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, (_, r))| r.as_ref().map(|r| (i, r)))
        .fold(None::<(usize, &BfgsResult)>, |acc, (i, r)| match acc {
            Some((_, b)) if b.f <= r.f => acc,
            _ => Some((i, r)),
        });
    let summaries: Vec<RestartSummary> = outcomes.iter().map(|(s, _)| s.clone()).collect();
    let Some((best_idx, best)) = best else {
        let detail = summaries
            .iter()
            .map(|s| format!("restart {}: {}", s.restart, s.failure.as_deref().unwrap_or("unknown")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::TrainingFailed(detail));
    };

    let theta = from_log_vector(&problem.base, &free, &best.x)?;
    let mut model = TrainedModel::from_hyperparameters(theta, *osc, data.clone())?;
    model.diagnostics = Some(TrainDiagnostics {
        restart: best_idx,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
        converged: best.converged,
        free_params: free.iter().map(ParamId::name).collect(),
        restarts: summaries,
    });
    log::info!(
        "trained: restart {best_idx}, loglik {:.6e}, sigma_s {:.4e}, ell {:.4e}, converged {}",
        model.final_likelihood,
        theta.kernel.sigma_s(),
        theta.kernel.ell(),
        best.converged
    );
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{assemble_covariance, Channel};
    use nalgebra::Cholesky;
    use rand_distr::{Distribution, StandardNormal};

    fn osc() -> OscillatorParams {
        OscillatorParams::new(1.0, 0.05, 2.0 * std::f64::consts::PI).unwrap()
    }

    /// Draw from a GP with known hyperparameters on a uniform grid.
    fn gp_sample(theta: &Hyperparameters, n: usize, dt: f64, seed: u64) -> MeasurementSet {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let probe = MeasurementSet::empty().with(ResponseKind::Disp, Channel::new(t.clone(), vec![0.0; n]).unwrap());
        let mut k = assemble_covariance(theta, &probe).unwrap();
        for i in 0..n {
            k[(i, i)] += 1e-10;
        }
        let l = Cholesky::new(k).unwrap().l();
        let mut rng = rng_from(seed);
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let y = l * z;
        MeasurementSet::empty().with(ResponseKind::Disp, Channel::new(t, y.as_slice().to_vec()).unwrap())
    }

    fn truth() -> Hyperparameters {
        Hyperparameters::new(KernelParams::new(1.0, 0.3).unwrap()).with_noise(ResponseKind::Disp, 0.05)
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.restarts = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            init_ranges: InitRanges {
                ell: Some((2.0, 1.0)),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn recovers_known_hyperparameters() {
        // Bounds frozen from a 20-seed sweep (see recovery_spread_over_seeds).
        let data = gp_sample(&truth(), 200, 0.05, 11);
        let cfg = TrainConfig {
            seed: 3,
            ..Default::default()
        };
        let m = train(&osc(), &data, &cfg).unwrap();
        let ell = m.theta.kernel.ell();
        let sn = m.theta.noise_disp.unwrap();
        assert!((ell - 0.3).abs() <= 0.2 * 0.3, "ell {ell}");
        assert!((sn - 0.05).abs() <= 0.5 * 0.05, "noise {sn}");
    }

    #[test]
    #[ignore = "slow calibration sweep; run with --ignored to regenerate bounds"]
    fn recovery_spread_over_seeds() {
        for s in 0..20 {
            let data = gp_sample(&truth(), 200, 0.05, s);
            let m = train(&osc(), &data, &TrainConfig::default()).unwrap();
            println!(
                "seed {s}: ell {:.4} noise {:.4}",
                m.theta.kernel.ell(),
                m.theta.noise_disp.unwrap()
            );
        }
    }

    #[test]
    fn deterministic_given_seed_and_independent_of_threading() {
        let data = gp_sample(&truth(), 60, 0.05, 5);
        let cfg = TrainConfig {
            seed: 9,
            restarts: 4,
            ..Default::default()
        };
        let a = train(&osc(), &data, &cfg).unwrap();
        let b = train(&osc(), &data, &cfg).unwrap();
        let c = train(&osc(), &data, &TrainConfig { parallel: false, ..cfg }).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.theta, c.theta);
    }

    #[test]
    fn best_restart_dominates() {
        let data = gp_sample(&truth(), 60, 0.05, 6);
        let m = train(
            &osc(),
            &data,
            &TrainConfig {
                seed: 1,
                restarts: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let d = m.diagnostics.as_ref().unwrap();
        for r in &d.restarts {
            if let (Some(init), Some(fin)) = (r.initial_likelihood, r.final_likelihood) {
                assert!(fin >= init);
                assert!(m.final_likelihood >= fin - 1e-9 * fin.abs());
                assert!(m.final_likelihood >= init);
            }
        }
    }

    #[test]
    fn fixed_noise_is_not_optimized() {
        let data = gp_sample(&truth(), 40, 0.05, 2);
        let cfg = TrainConfig {
            fixed_noise: FixedNoise {
                disp: Some(0.05),
                ..Default::default()
            },
            restarts: 2,
            ..Default::default()
        };
        let m = train(&osc(), &data, &cfg).unwrap();
        assert_eq!(m.theta.noise_disp, Some(0.05));
        assert_eq!(m.diagnostics.unwrap().free_params, vec!["sigma_s", "ell"]);
    }

    #[test]
    fn too_little_data_is_rejected() {
        let data = MeasurementSet::empty().with(ResponseKind::Disp, Channel::new(vec![0.0], vec![1.0]).unwrap());
        assert!(matches!(
            train(&osc(), &data, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
