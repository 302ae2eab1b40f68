//! Joint covariance over heterogeneous response data and the log marginal likelihood.
//!
//! Training data are stacked as `y = [u, u̇, ü]` with absent types skipped. Block
//! `(a, b)` of the covariance holds `k^{(a,b)}(t_i, t_j)`; each self-block carries its
//! own white-noise variance on the diagonal.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{se_kernel_deriv_and_dell, DerivOrder, KernelParams};
use crate::oscillator::ResponseKind;

/// Relative jitter levels tried, in order, when Cholesky fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Samples of one response type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Channel {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "channel times/values",
                left: times.len(),
                right: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::InvalidParameter(
                "a present channel needs at least one sample".into(),
            ));
        }
        if let Some((i, _)) = times.iter().chain(&values).enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at position {i}")));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!(
                "channel times must be strictly increasing (index {})",
                i + 1
            )));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Training data: up to one channel per response type, stacked disp, vel, acc.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    channels: [Option<Channel>; 3],
}

impl MeasurementSet {
    /// No data at all; predictions from such a set are the prior.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: ResponseKind, channel: Channel) -> Self {
        self.channels[kind.index()] = Some(channel);
        self
    }

    pub fn insert(&mut self, kind: ResponseKind, channel: Channel) {
        self.channels[kind.index()] = Some(channel);
    }

    pub fn channel(&self, kind: ResponseKind) -> Option<&Channel> {
        self.channels[kind.index()].as_ref()
    }

    pub fn has(&self, kind: ResponseKind) -> bool {
        self.channels[kind.index()].is_some()
    }

    /// Present types in stacking order.
    pub fn kinds(&self) -> Vec<ResponseKind> {
        ResponseKind::ALL.into_iter().filter(|&k| self.has(k)).collect()
    }

    /// Total number of samples `N`.
    pub fn len(&self) -> usize {
        self.channels.iter().flatten().map(Channel::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked observation vector `y`.
    pub fn stacked_values(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.channels.iter().flatten().flat_map(|c| c.values.iter().copied()),
        )
    }

    /// `(kind, time)` per stacked index.
    pub fn stacked_points(&self) -> Vec<(ResponseKind, f64)> {
        ResponseKind::ALL
            .into_iter()
            .filter_map(|k| self.channel(k).map(|c| (k, c)))
            .flat_map(|(k, c)| c.times.iter().map(move |&t| (k, t)))
            .collect()
    }

    pub fn layout(&self) -> BlockLayout {
        let mut ranges: [Option<Range<usize>>; 3] = Default::default();
        let mut start = 0;
        for k in ResponseKind::ALL {
            if let Some(c) = self.channel(k) {
                ranges[k.index()] = Some(start..start + c.len());
                start += c.len();
            }
        }
        BlockLayout { ranges }
    }

    /// `(min, max)` time over all channels.
    pub fn span(&self) -> Option<(f64, f64)> {
        self.channels.iter().flatten().fold(None, |acc, c| {
            let (lo, hi) = (c.times[0], *c.times.last().unwrap());
            Some(match acc {
                None => (lo, hi),
                Some((a, b)) => (f64::min(a, lo), f64::max(b, hi)),
            })
        })
    }
}

/// Index ranges of each response type inside the stacked vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockLayout {
    pub ranges: [Option<Range<usize>>; 3],
}

impl BlockLayout {
    pub fn range(&self, kind: ResponseKind) -> Option<Range<usize>> {
        self.ranges[kind.index()].clone()
    }
}

/// Kernel parameters plus one noise standard deviation per present data type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kernel: KernelParams,
    pub noise_disp: Option<f64>,
    pub noise_vel: Option<f64>,
    pub noise_acc: Option<f64>,
}

impl Hyperparameters {
    pub fn new(kernel: KernelParams) -> Self {
        Self {
            kernel,
            noise_disp: None,
            noise_vel: None,
            noise_acc: None,
        }
    }

    pub fn with_noise(mut self, kind: ResponseKind, sigma: f64) -> Self {
        *self.noise_mut(kind) = Some(sigma);
        self
    }

    pub fn noise(&self, kind: ResponseKind) -> Option<f64> {
        match kind {
            ResponseKind::Disp => self.noise_disp,
            ResponseKind::Vel => self.noise_vel,
            ResponseKind::Acc => self.noise_acc,
        }
    }

    pub fn noise_mut(&mut self, kind: ResponseKind) -> &mut Option<f64> {
        match kind {
            ResponseKind::Disp => &mut self.noise_disp,
            ResponseKind::Vel => &mut self.noise_vel,
            ResponseKind::Acc => &mut self.noise_acc,
        }
    }

    /// Noise parameters must exist exactly for the data types present.
    pub fn check_against(&self, data: &MeasurementSet) -> Result<()> {
        for k in ResponseKind::ALL {
            match (self.noise(k), data.has(k)) {
                (Some(s), true) if !(s.is_finite() && s >= 0.0) => {
                    return Err(Error::Config(format!(
                        "noise for {} must be finite and >= 0, got {s}",
                        k.name()
                    )));
                }
                (Some(_), true) | (None, false) => {}
                (None, true) => {
                    return Err(Error::Config(format!(
                        "data contain {} but no noise parameter is set",
                        k.name()
                    )));
                }
                (Some(_), false) => {
                    return Err(Error::Config(format!(
                        "noise parameter for absent data type {}",
                        k.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Identifies one optimizable hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamId {
    SigmaS,
    Ell,
    Noise(ResponseKind),
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::SigmaS => "sigma_s".into(),
            ParamId::Ell => "ell".into(),
            ParamId::Noise(k) => format!("noise_{}", k.name()),
        }
    }

    pub fn get(&self, theta: &Hyperparameters) -> f64 {
        match self {
            ParamId::SigmaS => theta.kernel.sigma_s(),
            ParamId::Ell => theta.kernel.ell(),
            ParamId::Noise(k) => theta.noise(*k).unwrap_or(0.0),
        }
    }
}

/// Every parameter the data support: σ_s, ℓ and one noise term per present type.
pub fn all_free_params(data: &MeasurementSet) -> Vec<ParamId> {
    let mut p = vec![ParamId::SigmaS, ParamId::Ell];
    p.extend(data.kinds().into_iter().map(ParamId::Noise));
    p
}

/// Log-space coordinates of `free` at `theta`.
pub fn to_log_vector(theta: &Hyperparameters, free: &[ParamId]) -> Vec<f64> {
    free.iter().map(|p| p.get(theta).ln()).collect()
}

/// Rebuilds hyperparameters from log-space coordinates; parameters not in `free` keep `base` values.
pub fn from_log_vector(base: &Hyperparameters, free: &[ParamId], x: &[f64]) -> Result<Hyperparameters> {
    let mut sigma_s = base.kernel.sigma_s();
    let mut ell = base.kernel.ell();
    let mut out = *base;
    for (p, &v) in free.iter().zip(x) {
        let val = v.exp();
        match p {
            ParamId::SigmaS => sigma_s = val,
            ParamId::Ell => ell = val,
            ParamId::Noise(k) => *out.noise_mut(*k) = Some(val),
        }
    }
    out.kernel = KernelParams::new(sigma_s, ell)?;
    Ok(out)
}

/// Lower Cholesky factor of the joint covariance with bookkeeping.
#[derive(Debug, Clone)]
pub struct FactoredCovariance {
    layout: BlockLayout,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
}

impl FactoredCovariance {
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `K + jitter·I = L·Lᵀ`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Absolute diagonal jitter that was added (0 when plain Cholesky succeeded).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹·B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

/// Cholesky with an escalating jitter ladder `ε·mean(diag)`, `ε ∈ JITTER_LADDER`.
pub fn factorize(k: DMatrix<f64>) -> Result<FactoredCovariance> {
    factorize_with_layout(k, BlockLayout::default())
}

pub(crate) fn factorize_with_layout(k: DMatrix<f64>, layout: BlockLayout) -> Result<FactoredCovariance> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::InvalidParameter(format!(
            "covariance must be square, got {}x{}",
            n,
            k.ncols()
        )));
    }
    if let Some(f) = try_cholesky(k.clone(), 0.0, &layout) {
        return Ok(f);
    }
    let mean_diag = if n == 0 { 0.0 } else { k.diagonal().mean() };
    let mut tried = Vec::new();
    for eps in JITTER_LADDER {
        let jitter = eps * mean_diag;
        tried.push(jitter);
        if !(jitter > 0.0) {
            continue;
        }
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(f) = try_cholesky(kj, jitter, &layout) {
            log::debug!("Cholesky needed jitter {jitter:e} (eps {eps:e})");
            return Ok(f);
        }
    }
    Err(Error::IllConditioned { ladder: tried })
}

fn try_cholesky(k: DMatrix<f64>, jitter: f64, layout: &BlockLayout) -> Option<FactoredCovariance> {
    if k.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(k)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    Some(FactoredCovariance {
        layout: layout.clone(),
        chol,
        log_det,
        jitter,
    })
}

struct Assembly {
    k: DMatrix<f64>,
    /// Noise-free part, i.e. the signal covariance.
    signal: DMatrix<f64>,
    d_ell: DMatrix<f64>,
}

fn assemble(theta: &Hyperparameters, data: &MeasurementSet, with_grad: bool) -> Result<Assembly> {
    theta.check_against(data)?;
    let points = data.stacked_points();
    let n = points.len();
    let mut signal = DMatrix::zeros(n, n);
    let mut d_ell = if with_grad {
        DMatrix::zeros(n, n)
    } else {
        DMatrix::zeros(0, 0)
    };
    for j in 0..n {
        let (kj, tj) = points[j];
        for i in 0..=j {
            let (ki, ti) = points[i];
            let (v, dl) = se_kernel_deriv_and_dell(&theta.kernel, DerivOrder::new(ki.order(), kj.order()), ti, tj);
            signal[(i, j)] = v;
            signal[(j, i)] = v;
            if with_grad {
                d_ell[(i, j)] = dl;
                d_ell[(j, i)] = dl;
            }
        }
    }
    let mut k = signal.clone();
    for (i, (kind, _)) in points.iter().enumerate() {
        let s = theta.noise(*kind).unwrap_or(0.0);
        k[(i, i)] += s * s;
    }
    Ok(Assembly { k, signal, d_ell })
}

/// Joint block covariance of the stacked training vector, noise included.
pub fn assemble_covariance(theta: &Hyperparameters, data: &MeasurementSet) -> Result<DMatrix<f64>> {
    Ok(assemble(theta, data, false)?.k)
}

/// Assembles and factorizes in one go.
pub fn factorize_model(theta: &Hyperparameters, data: &MeasurementSet) -> Result<FactoredCovariance> {
    factorize_with_layout(assemble_covariance(theta, data)?, data.layout())
}

/// Log marginal likelihood and its gradient in log-parameter space.
#[derive(Debug, Clone)]
pub struct Likelihood {
    pub value: f64,
    /// `∂ value / ∂ log θ_j` for each entry of `params`; empty when not requested.
    pub gradient: Vec<f64>,
    pub params: Vec<ParamId>,
    pub jitter: f64,
}

/// Evaluates `log p(y | t, θ)` with the gradient over every supported parameter.
pub fn log_marginal_likelihood(theta: &Hyperparameters, data: &MeasurementSet) -> Result<Likelihood> {
    log_marginal_likelihood_free(theta, data, &all_free_params(data), true)
}

/// As [`log_marginal_likelihood`] but only differentiating `free`; `want_grad = false`
/// skips the O(N³) inverse.
pub fn log_marginal_likelihood_free(
    theta: &Hyperparameters,
    data: &MeasurementSet,
    free: &[ParamId],
    want_grad: bool,
) -> Result<Likelihood> {
    let need_ell = want_grad && free.contains(&ParamId::Ell);
    let asm = assemble(theta, data, need_ell)?;
    let n = asm.k.nrows();
    let y = data.stacked_values();
    let fac = factorize_with_layout(asm.k, data.layout())?;
    let alpha = fac.solve(&y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * fac.log_det - 0.5 * n as f64 * LN_2PI;
    if !value.is_finite() {
        return Err(Error::IllConditioned {
            ladder: vec![fac.jitter],
        });
    }

    let mut gradient = Vec::new();
    if want_grad {
        // W = ααᵀ − K⁻¹, ∂L/∂θ = ½ Σ W ⊙ ∂K/∂θ
        let mut w = fac.inverse();
        w.neg_mut();
        w.ger(1.0, &alpha, &alpha, 1.0);
        let layout = data.layout();
        for p in free {
            let g = match p {
                ParamId::SigmaS => w.component_mul(&asm.signal).sum(),
                ParamId::Ell => 0.5 * theta.kernel.ell() * w.component_mul(&asm.d_ell).sum(),
                ParamId::Noise(k) => {
                    let s = theta.noise(*k).unwrap_or(0.0);
                    let r = layout
                        .range(*k)
                        .ok_or_else(|| Error::Config(format!("no {} data for noise parameter", k.name())))?;
                    s * s * r.map(|i| w[(i, i)]).sum::<f64>()
                }
            };
            gradient.push(g);
        }
    }
    Ok(Likelihood {
        value,
        gradient,
        params: free.to_vec(),
        jitter: fac.jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::se_kernel;
    use crate::oscillator::response_kernel;

    fn kp(s: f64, l: f64) -> KernelParams {
        KernelParams::new(s, l).unwrap()
    }

    fn disp_set(times: &[f64], values: &[f64]) -> MeasurementSet {
        MeasurementSet::empty().with(
            ResponseKind::Disp,
            Channel::new(times.to_vec(), values.to_vec()).unwrap(),
        )
    }

    fn three_type_set(n: usize) -> MeasurementSet {
        let mut set = MeasurementSet::empty();
        for (j, k) in ResponseKind::ALL.into_iter().enumerate() {
            let t: Vec<f64> = (0..n).map(|i| 0.21 * i as f64 + 0.05 * j as f64).collect();
            let v: Vec<f64> = t.iter().map(|x| (1.7 * x + j as f64).sin()).collect();
            set.insert(k, Channel::new(t, v).unwrap());
        }
        set
    }

    #[test]
    fn noise_free_disp_block_is_base_kernel() {
        let t = [0.0, 0.4, 1.1];
        let data = disp_set(&t, &[0.0, 1.0, 0.5]);
        let theta = Hyperparameters::new(kp(1.3, 0.7)).with_noise(ResponseKind::Disp, 0.0);
        let k = assemble_covariance(&theta, &data).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k[(i, j)], se_kernel(&theta.kernel, t[i], t[j]));
            }
        }
    }

    #[test]
    fn noise_adds_variance_on_diagonal_only() {
        let t = [0.0, 0.4, 1.1];
        let data = disp_set(&t, &[0.0, 1.0, 0.5]);
        let base = Hyperparameters::new(kp(1.0, 0.5)).with_noise(ResponseKind::Disp, 0.0);
        let noisy = Hyperparameters::new(kp(1.0, 0.5)).with_noise(ResponseKind::Disp, 0.1);
        let a = assemble_covariance(&base, &data).unwrap();
        let b = assemble_covariance(&noisy, &data).unwrap();
        let d = &b - &a;
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.01 } else { 0.0 };
                assert!((d[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixed_blocks_are_transposes() {
        let data = three_type_set(5);
        let theta = Hyperparameters::new(kp(0.9, 0.6))
            .with_noise(ResponseKind::Disp, 0.01)
            .with_noise(ResponseKind::Vel, 0.02)
            .with_noise(ResponseKind::Acc, 0.03);
        let k = assemble_covariance(&theta, &data).unwrap();
        assert_eq!(k.nrows(), 15);
        assert_eq!(k, k.transpose());
        let vel_acc = k.view((5, 10), (5, 5)).into_owned();
        let acc_vel = k.view((10, 5), (5, 5)).into_owned();
        assert_eq!(vel_acc, acc_vel.transpose());
        let tv = &data.channel(ResponseKind::Vel).unwrap().times;
        let ta = &data.channel(ResponseKind::Acc).unwrap().times;
        assert_eq!(
            vel_acc[(1, 3)],
            response_kernel(&theta.kernel, ResponseKind::Vel, ResponseKind::Acc, tv[1], ta[3])
        );
    }

    #[test]
    fn shared_block_is_unchanged_by_adding_a_type() {
        let full = three_type_set(4);
        let disp_only =
            MeasurementSet::empty().with(ResponseKind::Disp, full.channel(ResponseKind::Disp).unwrap().clone());
        let theta1 = Hyperparameters::new(kp(1.1, 0.4)).with_noise(ResponseKind::Disp, 0.05);
        let theta3 = theta1
            .with_noise(ResponseKind::Vel, 0.1)
            .with_noise(ResponseKind::Acc, 0.2);
        let a = assemble_covariance(&theta1, &disp_only).unwrap();
        let b = assemble_covariance(&theta3, &full).unwrap();
        assert_eq!(a, b.view((0, 0), (4, 4)).into_owned());
    }

    #[test]
    fn availability_mismatch_is_a_config_error() {
        let data = disp_set(&[0.0, 1.0], &[0.0, 1.0]);
        let theta = Hyperparameters::new(kp(1.0, 1.0));
        assert!(matches!(assemble_covariance(&theta, &data), Err(Error::Config(_))));
        let theta = Hyperparameters::new(kp(1.0, 1.0))
            .with_noise(ResponseKind::Disp, 0.1)
            .with_noise(ResponseKind::Acc, 0.1);
        assert!(matches!(assemble_covariance(&theta, &data), Err(Error::Config(_))));
    }

    #[test]
    fn factorize_identity_and_two_by_two() {
        let f = factorize(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(f.lower(), DMatrix::identity(4, 4));
        assert_eq!(f.log_det(), 0.0);
        assert_eq!(f.jitter(), 0.0);
        let f = factorize(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((f.log_det() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_matches_assembly() {
        let data = three_type_set(6);
        let theta = Hyperparameters::new(kp(0.9, 0.6))
            .with_noise(ResponseKind::Disp, 0.05)
            .with_noise(ResponseKind::Vel, 0.05)
            .with_noise(ResponseKind::Acc, 0.05);
        let k = assemble_covariance(&theta, &data).unwrap();
        let f = factorize(k.clone()).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let rel = (&f.reconstruct() - &k).abs().max() / k.abs().max();
        assert!(rel <= 1e-10, "{rel}");
    }

    #[test]
    fn near_duplicate_times_need_jitter() {
        let data = disp_set(&[0.0, 1e-9, 0.5], &[0.0, 0.0, 1.0]);
        let theta = Hyperparameters::new(kp(1.0, 1.0)).with_noise(ResponseKind::Disp, 0.0);
        let f = factorize(assemble_covariance(&theta, &data).unwrap()).unwrap();
        assert!(f.jitter() > 0.0);
        assert!(JITTER_LADDER.iter().any(|e| (f.jitter() - e).abs() < 1e-24));
    }

    #[test]
    fn indefinite_matrix_reports_ladder() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match factorize(k) {
            Err(Error::IllConditioned { ladder }) => assert_eq!(ladder.len(), 3),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
    }

    #[test]
    fn single_point_likelihood() {
        let data = disp_set(&[0.0], &[0.0]);
        let theta = Hyperparameters::new(kp(1.0, 1.0)).with_noise(ResponseKind::Disp, 0.0);
        let l = log_marginal_likelihood(&theta, &data).unwrap();
        assert!((l.value + 0.5 * LN_2PI).abs() < 1e-12);
        assert!((l.value + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = three_type_set(6);
        let theta = Hyperparameters::new(kp(0.8, 0.5))
            .with_noise(ResponseKind::Disp, 0.1)
            .with_noise(ResponseKind::Vel, 0.2)
            .with_noise(ResponseKind::Acc, 0.3);
        let free = all_free_params(&data);
        let l = log_marginal_likelihood(&theta, &data).unwrap();
        let x0 = to_log_vector(&theta, &free);
        let h = 1e-5;
        for j in 0..free.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[j] += h;
            xm[j] -= h;
            let fp = log_marginal_likelihood_free(&from_log_vector(&theta, &free, &xp).unwrap(), &data, &free, false)
                .unwrap();
            let fm = log_marginal_likelihood_free(&from_log_vector(&theta, &free, &xm).unwrap(), &data, &free, false)
                .unwrap();
            let fd = (fp.value - fm.value) / (2.0 * h);
            let rel = (fd - l.gradient[j]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-5, "{:?}: fd {fd} analytic {}", free[j], l.gradient[j]);
        }
    }

    #[test]
    fn log_vector_round_trip() {
        let data = three_type_set(3);
        let theta = Hyperparameters::new(kp(0.8, 0.5))
            .with_noise(ResponseKind::Disp, 0.1)
            .with_noise(ResponseKind::Vel, 0.2)
            .with_noise(ResponseKind::Acc, 0.3);
        let free = all_free_params(&data);
        let back = from_log_vector(&theta, &free, &to_log_vector(&theta, &free)).unwrap();
        for p in &free {
            assert!((p.get(&back) - p.get(&theta)).abs() < 1e-15);
        }
    }
}
