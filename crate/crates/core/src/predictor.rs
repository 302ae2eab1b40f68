//! Posterior inference by Gaussian conditioning.
//!
//! For targets `f⋆` with cross-covariance `K⋆` (training × targets) and prior
//! covariance `K⋆⋆`:
//!
//! ```text
//! μ = K⋆ᵀ K⁻¹ y
//! Σ = K⋆⋆ − K⋆ᵀ K⁻¹ K⋆ = K⋆⋆ − VᵀV,   V = L⁻¹ K⋆
//! ```
//!
//! The force uses `K⋆ = [k_Fu, k_Fu̇, k_Fü]` and `K⋆⋆ = k_FF`; responses use the
//! response kernels directly.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::factorize;
use crate::oscillator::{force_force_kernel, force_response_kernel, response_kernel, ResponseKind};
use crate::rng::rng_from;
use crate::trainer::TrainedModel;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Relative tolerance below which negative posterior variances are treated as roundoff.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-8;

/// Gaussian posterior over a quantity on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub std: Vec<f64>,
}

/// Posterior of the latent force.
pub type ForcePosterior = Posterior;

impl Posterior {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    /// Pointwise `μ ± 1.96σ`.
    pub fn interval95(&self) -> (Vec<f64>, Vec<f64>) {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| (m - Z95 * s, m + Z95 * s))
            .unzip()
    }
}

fn condition(
    model: &TrainedModel,
    times: &[f64],
    cross: impl Fn(f64, ResponseKind, f64) -> f64 + Sync,
    prior: impl Fn(f64, f64) -> f64 + Sync,
) -> Result<Posterior> {
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("prediction time {t} is not finite")));
    }
    let m = times.len();
    let prior_cols: Vec<f64> = times
        .par_iter()
        .flat_map_iter(|&tj| times.iter().map(move |&ti| (ti, tj)))
        .map(|(ti, tj)| prior(ti, tj))
        .collect();
    let kss = DMatrix::from_vec(m, m, prior_cols);

    let (mean, mut cov) = match &model.factored {
        None => (vec![0.0; m], kss.clone()),
        Some(fac) => {
            let points = model.data.stacked_points();
            let n = points.len();
            let cols: Vec<f64> = times
                .par_iter()
                .flat_map_iter(|&ts| points.iter().map(move |&(k, t)| (ts, k, t)))
                .map(|(ts, k, t)| cross(ts, k, t))
                .collect();
            let ks = DMatrix::from_vec(n, m, cols);
            let mean: DVector<f64> = ks.tr_mul(&model.alpha);
            let v = fac.solve_lower(&ks);
            let cov = &kss - v.tr_mul(&v);
            (mean.as_slice().to_vec(), cov)
        }
    };

    // exact symmetry
    let sym = (&cov + cov.transpose()) * 0.5;
    cov = sym;

    let scale = kss.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = VARIANCE_CLAMP_TOL * scale;
    for i in 0..m {
        let v = cov[(i, i)];
        if v < -tol || !v.is_finite() {
            return Err(Error::NegativeVariance {
                index: i,
                value: v,
                tolerance: tol,
            });
        }
        if v < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    let std = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    Ok(Posterior {
        times: times.to_vec(),
        mean,
        cov,
        std,
    })
}

/// Posterior of the latent force at `times`.
pub fn predict_force(model: &TrainedModel, times: &[f64]) -> Result<ForcePosterior> {
    let (osc, kp) = (model.osc, model.theta.kernel);
    condition(
        model,
        times,
        |ts, kind, t| force_response_kernel(&osc, &kp, kind, ts, t),
        |a, b| force_force_kernel(&osc, &kp, a, b),
    )
}

/// Posterior of a response (displacement, velocity or acceleration) at `times`.
pub fn predict_response(model: &TrainedModel, times: &[f64], out: ResponseKind) -> Result<Posterior> {
    let kp = model.theta.kernel;
    condition(
        model,
        times,
        |ts, kind, t| response_kernel(&kp, out, kind, ts, t),
        |a, b| response_kernel(&kp, out, out, a, b),
    )
}

/// Draws `n_samples` realizations from `N(μ, Σ)`; rows are samples.
pub fn sample_posterior(posterior: &Posterior, n_samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    let m = posterior.len();
    let mean = DVector::from_column_slice(&posterior.mean);
    let max_diag = posterior.cov.diagonal().iter().fold(0.0f64, |a, v| a.max(*v));
    let mut out = DMatrix::zeros(n_samples, m);
    if max_diag == 0.0 {
        for mut row in out.row_iter_mut() {
            row.copy_from(&mean.transpose());
        }
        return Ok(out);
    }
    let fac = factorize(posterior.cov.clone())?;
    let l = fac.lower();
    let mut rng = rng_from(seed);
    let mut z = DVector::zeros(m);
    for s in 0..n_samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let draw = &mean + &l * &z;
        out.row_mut(s).copy_from(&draw.transpose());
    }
    Ok(out)
}

/// One modal contribution: a mean series with optional variance.
#[derive(Debug, Clone, Copy)]
pub struct ModalTrack<'a> {
    pub times: &'a [f64],
    pub mean: &'a [f64],
    pub variance: Option<&'a [f64]>,
}

impl<'a> ModalTrack<'a> {
    pub fn deterministic(times: &'a [f64], values: &'a [f64]) -> Self {
        Self {
            times,
            mean: values,
            variance: None,
        }
    }
}

/// Weighted sum of modal tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Superposed {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Superposed {
    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Global response `Σ_j φ_j·x_j` with variance `Σ_j φ_j²·σ_j²`; modes are taken as independent.
pub fn superpose_modal(tracks: &[ModalTrack], weights: &[f64]) -> Result<Superposed> {
    if tracks.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "modal tracks/weights",
            left: tracks.len(),
            right: weights.len(),
        });
    }
    let first = tracks
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one mode is required".into()))?;
    let n = first.times.len();
    for (j, tr) in tracks.iter().enumerate() {
        if tr.times != first.times {
            return Err(Error::GridMismatch(format!(
                "mode {j} does not share the time grid of mode 0"
            )));
        }
        if tr.mean.len() != n || tr.variance.is_some_and(|v| v.len() != n) {
            return Err(Error::GridMismatch(format!(
                "mode {j} series length differs from its time grid"
            )));
        }
    }
    let mut mean = vec![0.0; n];
    let mut variance = vec![0.0; n];
    for (tr, &w) in tracks.iter().zip(weights) {
        for i in 0..n {
            mean[i] += w * tr.mean[i];
            if let Some(v) = tr.variance {
                variance[i] += w * w * v[i];
            }
        }
    }
    Ok(Superposed {
        times: first.times.to_vec(),
        mean,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{assemble_covariance, Channel, Hyperparameters, MeasurementSet};
    use crate::kernels::KernelParams;
    use crate::oscillator::OscillatorParams;
    use nalgebra::LU;

    fn osc() -> OscillatorParams {
        OscillatorParams::new(1.0, 0.05, 2.0 * std::f64::consts::PI).unwrap()
    }

    fn mixed_fixture() -> (Hyperparameters, MeasurementSet) {
        let data = MeasurementSet::empty()
            .with(
                ResponseKind::Disp,
                Channel::new(vec![0.0, 0.3], vec![0.1, 0.2]).unwrap(),
            )
            .with(
                ResponseKind::Vel,
                Channel::new(vec![0.1, 0.45], vec![0.5, -0.3]).unwrap(),
            )
            .with(
                ResponseKind::Acc,
                Channel::new(vec![0.2, 0.6], vec![-2.0, 1.0]).unwrap(),
            );
        let theta = Hyperparameters::new(KernelParams::new(0.4, 0.25).unwrap())
            .with_noise(ResponseKind::Disp, 0.01)
            .with_noise(ResponseKind::Vel, 0.05)
            .with_noise(ResponseKind::Acc, 0.2);
        (theta, data)
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        let (theta, data) = mixed_fixture();
        let o = osc();
        let model = TrainedModel::from_hyperparameters(theta, o, data.clone()).unwrap();
        let ts = [0.05, 0.25, 0.5, 0.9];
        let post = predict_force(&model, &ts).unwrap();

        // independent route: LU inverse, element-by-element kernels
        let k = assemble_covariance(&theta, &data).unwrap();
        let kinv = LU::new(k).try_inverse().unwrap();
        let pts = data.stacked_points();
        let y = data.stacked_values();
        let ks = DMatrix::from_fn(pts.len(), ts.len(), |i, j| {
            force_response_kernel(&o, &theta.kernel, pts[i].0, ts[j], pts[i].1)
        });
        let kss = DMatrix::from_fn(ts.len(), ts.len(), |i, j| {
            force_force_kernel(&o, &theta.kernel, ts[i], ts[j])
        });
        let mu = ks.transpose() * &kinv * y;
        let sigma = kss - ks.transpose() * &kinv * &ks;
        for i in 0..ts.len() {
            assert!((post.mean[i] - mu[i]).abs() <= 1e-8 * mu[i].abs().max(1e-3), "mean {i}");
            for j in 0..ts.len() {
                let scale = sigma[(i, i)].abs().max(sigma[(j, j)].abs());
                assert!((post.cov[(i, j)] - sigma[(i, j)]).abs() <= 1e-8 * scale, "cov {i},{j}");
            }
        }
        assert_eq!(post.cov, post.cov.transpose());
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let (theta, data) = mixed_fixture();
        let o = osc();
        let model = TrainedModel::from_hyperparameters(theta, o, data).unwrap();
        let far = 0.6 + 10.0 * 0.25 + 5.0;
        let post = predict_force(&model, &[far]).unwrap();
        let prior = force_force_kernel(&o, &theta.kernel, far, far);
        assert!(post.mean[0].abs() < 1e-10);
        assert!((post.cov[(0, 0)] - prior).abs() < 1e-10 * prior);
    }

    #[test]
    fn empty_data_gives_prior() {
        let theta = Hyperparameters::new(KernelParams::new(1.0, 0.5).unwrap());
        let model = TrainedModel::from_hyperparameters(theta, osc(), MeasurementSet::empty()).unwrap();
        let post = predict_response(&model, &[0.0, 0.5, 1.0], ResponseKind::Disp).unwrap();
        assert!(post.mean.iter().all(|&m| m == 0.0));
        assert_eq!(post.cov[(0, 0)], 1.0);
    }

    #[test]
    fn noise_free_interpolation_reproduces_training_values() {
        let t: Vec<f64> = (0..8).map(|i| 0.2 * i as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| (2.0 * x).sin()).collect();
        let data = MeasurementSet::empty().with(ResponseKind::Disp, Channel::new(t.clone(), v.clone()).unwrap());
        let theta = Hyperparameters::new(KernelParams::new(1.0, 0.3).unwrap()).with_noise(ResponseKind::Disp, 0.0);
        let model = TrainedModel::from_hyperparameters(theta, osc(), data).unwrap();
        assert_eq!(model.factored.as_ref().unwrap().jitter(), 0.0);
        let post = predict_response(&model, &t, ResponseKind::Disp).unwrap();
        for (p, y) in post.mean.iter().zip(&v) {
            assert!((p - y).abs() <= 1e-6 * y.abs().max(1e-6));
        }
    }

    #[test]
    fn velocity_posterior_is_derivative_of_displacement_posterior() {
        let t: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| (2.0 * x).sin() + 0.3 * (0.7 * x).cos()).collect();
        let data = MeasurementSet::empty().with(ResponseKind::Disp, Channel::new(t, v).unwrap());
        let theta = Hyperparameters::new(KernelParams::new(1.0, 0.4).unwrap()).with_noise(ResponseKind::Disp, 0.01);
        let model = TrainedModel::from_hyperparameters(theta, osc(), data).unwrap();
        let h = 1e-4;
        let grid: Vec<f64> = (0..20).map(|i| 0.5 + 0.1 * i as f64).collect();
        let shifted: Vec<f64> = grid.iter().flat_map(|&g| [g - h, g + h]).collect();
        let disp = predict_response(&model, &shifted, ResponseKind::Disp).unwrap();
        let vel = predict_response(&model, &grid, ResponseKind::Vel).unwrap();
        let scale = vel.mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..grid.len() {
            let fd = (disp.mean[2 * i + 1] - disp.mean[2 * i]) / (2.0 * h);
            assert!(
                (fd - vel.mean[i]).abs() <= 1e-3 * scale,
                "{i}: fd {fd} vs {}",
                vel.mean[i]
            );
        }
    }

    #[test]
    fn adding_data_never_increases_variance() {
        let (theta, data) = mixed_fixture();
        let o = osc();
        let ts: Vec<f64> = (0..15).map(|i| -0.2 + 0.07 * i as f64).collect();
        let smaller = MeasurementSet::empty()
            .with(ResponseKind::Disp, data.channel(ResponseKind::Disp).unwrap().clone())
            .with(ResponseKind::Vel, data.channel(ResponseKind::Vel).unwrap().clone());
        let theta_small = Hyperparameters {
            noise_acc: None,
            ..theta
        };
        let a = predict_force(
            &TrainedModel::from_hyperparameters(theta_small, o, smaller).unwrap(),
            &ts,
        )
        .unwrap();
        let b = predict_force(&TrainedModel::from_hyperparameters(theta, o, data).unwrap(), &ts).unwrap();
        for i in 0..ts.len() {
            assert!(b.cov[(i, i)] <= a.cov[(i, i)] * (1.0 + 1e-10), "index {i}");
        }
    }

    #[test]
    fn sampling_zero_covariance_returns_mean() {
        let post = Posterior {
            times: vec![0.0, 1.0],
            mean: vec![1.5, -2.0],
            cov: DMatrix::zeros(2, 2),
            std: vec![0.0, 0.0],
        };
        let s = sample_posterior(&post, 5, 1).unwrap();
        for r in 0..5 {
            assert_eq!(s[(r, 0)], 1.5);
            assert_eq!(s[(r, 1)], -2.0);
        }
    }

    #[test]
    fn sampling_moments_and_reproducibility() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.1, 0.5, 2.0, 0.3, 0.1, 0.3, 0.5]);
        let post = Posterior {
            times: vec![0.0, 1.0, 2.0],
            mean: vec![1.0, -1.0, 0.5],
            std: cov.diagonal().iter().map(|v: &f64| v.sqrt()).collect(),
            cov,
        };
        let n = 10_000;
        let s = sample_posterior(&post, n, 42).unwrap();
        for j in 0..3 {
            let m = s.column(j).mean();
            assert!((m - post.mean[j]).abs() <= 3.0 * post.std[j] / (n as f64).sqrt());
        }
        assert_eq!(s, sample_posterior(&post, n, 42).unwrap());
    }

    #[test]
    fn superposition_identities() {
        let t = [0.0, 0.1, 0.2];
        let a = [1.0, 2.0, 3.0];
        let va = [0.1, 0.2, 0.3];
        let one = superpose_modal(
            &[ModalTrack {
                times: &t,
                mean: &a,
                variance: Some(&va),
            }],
            &[1.0],
        )
        .unwrap();
        assert_eq!(one.mean, a);
        assert_eq!(one.variance, va);
        let tr = ModalTrack::deterministic(&t, &a);
        let zero = superpose_modal(&[tr, tr], &[1.0, -1.0]).unwrap();
        assert!(zero.mean.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn superposition_rejects_grid_mismatch() {
        let a = ModalTrack::deterministic(&[0.0, 0.1], &[1.0, 2.0]);
        let b = ModalTrack::deterministic(&[0.0, 0.2], &[1.0, 2.0]);
        assert!(matches!(
            superpose_modal(&[a, b], &[1.0, 1.0]),
            Err(Error::GridMismatch(_))
        ));
    }
}
