//! Harmonic oscillator `m·ü + c·u̇ + k_s·u = F`.
//!
//! Applying the operator `L = m·∂² + c·∂ + k_s` to one or both time arguments of
//! the displacement kernel gives the force/response and force/force covariances.
//! The simulator integrates the same equation with fixed-step RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{se_kernel_deriv, se_kernel_deriv_table, DerivOrder, KernelParams, Order};

/// Modal mass, damping ratio and circular natural frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOscillator", into = "RawOscillator")]
pub struct OscillatorParams {
    m: f64,
    zeta: f64,
    omega_n: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOscillator {
    m: f64,
    zeta: f64,
    omega_n: f64,
}

impl TryFrom<RawOscillator> for OscillatorParams {
    type Error = Error;

    fn try_from(r: RawOscillator) -> Result<Self> {
        OscillatorParams::new(r.m, r.zeta, r.omega_n)
    }
}

impl From<OscillatorParams> for RawOscillator {
    fn from(o: OscillatorParams) -> Self {
        RawOscillator {
            m: o.m,
            zeta: o.zeta,
            omega_n: o.omega_n,
        }
    }
}

impl OscillatorParams {
    pub fn new(m: f64, zeta: f64, omega_n: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {m}")));
        }
        if !(omega_n.is_finite() && omega_n > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "natural frequency must be positive, got {omega_n}"
            )));
        }
        if !(zeta.is_finite() && (0.0..1.0).contains(&zeta)) {
            return Err(Error::InvalidParameter(format!(
                "damping ratio must lie in [0, 1), got {zeta}"
            )));
        }
        Ok(Self { m, zeta, omega_n })
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn omega_n(&self) -> f64 {
        self.omega_n
    }

    /// Viscous damping `c = 2·m·ζ·ω_n`.
    pub fn damping(&self) -> f64 {
        2.0 * self.m * self.zeta * self.omega_n
    }

    /// Stiffness `k_s = m·ω_n²`.
    pub fn stiffness(&self) -> f64 {
        self.m * self.omega_n * self.omega_n
    }

    /// Operator coefficients indexed by derivative order: `[k_s, c, m]`.
    pub fn operator_coefficients(&self) -> [f64; 3] {
        [self.stiffness(), self.damping(), self.m]
    }

    /// `ü` from the equation of motion.
    #[inline]
    pub fn acceleration(&self, force: f64, u: f64, u_dot: f64) -> f64 {
        (force - self.damping() * u_dot - self.stiffness() * u) / self.m
    }

    /// Kinetic plus strain energy.
    pub fn energy(&self, u: f64, u_dot: f64) -> f64 {
        0.5 * self.m * u_dot * u_dot + 0.5 * self.stiffness() * u * u
    }
}

/// Which measured response a value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Disp,
    Vel,
    Acc,
}

impl ResponseKind {
    /// Stacking order of the training vector.
    pub const ALL: [ResponseKind; 3] = [ResponseKind::Disp, ResponseKind::Vel, ResponseKind::Acc];

    pub fn order(self) -> Order {
        match self {
            ResponseKind::Disp => Order::Zero,
            ResponseKind::Vel => Order::One,
            ResponseKind::Acc => Order::Two,
        }
    }

    pub fn index(self) -> usize {
        self.order().as_usize()
    }

    pub fn name(self) -> &'static str {
        match self {
            ResponseKind::Disp => "disp",
            ResponseKind::Vel => "vel",
            ResponseKind::Acc => "acc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "disp" | "u" => Some(ResponseKind::Disp),
            "vel" | "v" | "u_dot" => Some(ResponseKind::Vel),
            "acc" | "a" | "u_ddot" => Some(ResponseKind::Acc),
            _ => None,
        }
    }
}

/// Covariance between two response types; independent of the oscillator.
pub fn response_kernel(kp: &KernelParams, out: ResponseKind, out_prime: ResponseKind, t: f64, t_prime: f64) -> f64 {
    se_kernel_deriv(kp, DerivOrder::new(out.order(), out_prime.order()), t, t_prime)
}

/// `L_t k^{(0,b)}(t, t′)`: covariance between the force at `t` and a response at `t′`.
pub fn force_response_kernel(
    osc: &OscillatorParams,
    kp: &KernelParams,
    resp: ResponseKind,
    t: f64,
    t_prime: f64,
) -> f64 {
    let coef = osc.operator_coefficients();
    let table = se_kernel_deriv_table(kp, t, t_prime);
    let b = resp.index();
    coef[0] * table[0][b] + coef[1] * table[1][b] + coef[2] * table[2][b]
}

/// `L_t L_{t′} k(t, t′)`: prior force covariance.
pub fn force_force_kernel(osc: &OscillatorParams, kp: &KernelParams, t: f64, t_prime: f64) -> f64 {
    let coef = osc.operator_coefficients();
    let table = se_kernel_deriv_table(kp, t, t_prime);
    // paired off-diagonal terms make the result exactly symmetric in (t, t′)
    let mut acc = 0.0;
    for a in 0..3 {
        acc += coef[a] * coef[a] * table[a][a];
        for b in a + 1..3 {
            acc += coef[a] * coef[b] * (table[a][b] + table[b][a]);
        }
    }
    acc
}

/// Sampled force on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSignal {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ForcingSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "forcing times/values",
                left: times.len(),
                right: values.len(),
            });
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!(
                "forcing times must be strictly increasing (index {})",
                i + 1
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("forcing contains non-finite samples".into()));
        }
        Ok(Self { times, values })
    }

    /// Samples `f(t)` at `t_i = i/f_s`, `i < n`.
    pub fn from_fn(n: usize, f_s: f64, f: impl Fn(f64) -> f64) -> Self {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / f_s).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Displacement, velocity and acceleration on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub u_dot: Vec<f64>,
    pub u_ddot: Vec<f64>,
}

impl ResponseRecord {
    pub fn series(&self, kind: ResponseKind) -> &[f64] {
        match kind {
            ResponseKind::Disp => &self.u,
            ResponseKind::Vel => &self.u_dot,
            ResponseKind::Acc => &self.u_ddot,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Returns the uniform step of `times`, or an error naming the first offending interval.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidParameter("time grid needs at least two samples".into()));
    }
    let n = times.len() - 1;
    let dt = (times[n] - times[0]) / n as f64;
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformGrid {
                index: i,
                step,
                expected: dt,
            });
        }
    }
    Ok(dt)
}

/// Values at interval midpoints by four-point Lagrange interpolation (fourth order),
/// one-sided at the ends. Keeps RK4 fourth-order when forcing is only known at samples.
pub(crate) fn midpoint_values(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    match n {
        0 | 1 => Vec::new(),
        2 => vec![0.5 * (samples[0] + samples[1])],
        3 => {
            // quadratic through all three points
            let (a, b, c) = (samples[0], samples[1], samples[2]);
            vec![0.375 * a + 0.75 * b - 0.125 * c, -0.125 * a + 0.75 * b + 0.375 * c]
        }
        _ => (0..n - 1)
            .map(|i| {
                if i == 0 {
                    0.3125 * samples[0] + 0.9375 * samples[1] - 0.3125 * samples[2] + 0.0625 * samples[3]
                } else if i == n - 2 {
                    0.3125 * samples[n - 1] + 0.9375 * samples[n - 2] - 0.3125 * samples[n - 3]
                        + 0.0625 * samples[n - 4]
                } else {
                    (9.0 * (samples[i] + samples[i + 1]) - samples[i - 1] - samples[i + 2]) / 16.0
                }
            })
            .collect(),
    }
}

/// RK4 stage position within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Start,
    Mid,
    End,
}

/// One RK4 step for a set of uncoupled modal oscillators whose forcing may depend
/// on the full modal state. `forces(stage, q, v, out)` fills the modal forces.
pub(crate) fn rk4_modal_step<F>(
    oscs: &[OscillatorParams],
    q: &mut [f64],
    v: &mut [f64],
    h: f64,
    mut forces: F,
) -> Result<()>
where
    F: FnMut(Stage, &[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let n = oscs.len();
    let mut f = vec![0.0; n];
    let mut qs = vec![0.0; n];
    let mut vs = vec![0.0; n];
    let mut kq = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kv = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];

    let stages = [
        (Stage::Start, 0.0),
        (Stage::Mid, 0.5),
        (Stage::Mid, 0.5),
        (Stage::End, 1.0),
    ];
    for (s, &(stage, frac)) in stages.iter().enumerate() {
        for j in 0..n {
            if s == 0 {
                qs[j] = q[j];
                vs[j] = v[j];
            } else {
                qs[j] = q[j] + frac * h * kq[s - 1][j];
                vs[j] = v[j] + frac * h * kv[s - 1][j];
            }
        }
        forces(stage, &qs, &vs, &mut f)?;
        for j in 0..n {
            kq[s][j] = vs[j];
            kv[s][j] = oscs[j].acceleration(f[j], qs[j], vs[j]);
        }
    }
    for j in 0..n {
        q[j] += h / 6.0 * (kq[0][j] + 2.0 * kq[1][j] + 2.0 * kq[2][j] + kq[3][j]);
        v[j] += h / 6.0 * (kv[0][j] + 2.0 * kv[1][j] + 2.0 * kv[2][j] + kv[3][j]);
    }
    Ok(())
}

/// Integrates the oscillator under `forcing` with fixed-step RK4 at the forcing rate.
pub fn simulate_response(osc: &OscillatorParams, forcing: &ForcingSignal, u0: f64, v0: f64) -> Result<ResponseRecord> {
    if !(u0.is_finite() && v0.is_finite()) {
        return Err(Error::InvalidParameter("initial conditions must be finite".into()));
    }
    let h = uniform_step(forcing.times())?;
    let values = forcing.values();
    let mid = midpoint_values(values);
    let n = forcing.len();

    let mut u = Vec::with_capacity(n);
    let mut u_dot = Vec::with_capacity(n);
    let mut q = [u0];
    let mut v = [v0];
    u.push(u0);
    u_dot.push(v0);
    let oscs = [*osc];
    for i in 0..n - 1 {
        rk4_modal_step(&oscs, &mut q, &mut v, h, |stage, _, _, out| {
            out[0] = match stage {
                Stage::Start => values[i],
                Stage::Mid => mid[i],
                Stage::End => values[i + 1],
            };
            Ok(())
        })?;
        u.push(q[0]);
        u_dot.push(v[0]);
    }
    let u_ddot = (0..n).map(|i| osc.acceleration(values[i], u[i], u_dot[i])).collect();
    Ok(ResponseRecord {
        times: forcing.times().to_vec(),
        u,
        u_dot,
        u_ddot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_osc() -> OscillatorParams {
        OscillatorParams::new(1.0, 0.05, 2.0 * PI).unwrap()
    }

    fn kp(s: f64, l: f64) -> KernelParams {
        KernelParams::new(s, l).unwrap()
    }

    #[test]
    fn invalid_oscillators_rejected() {
        assert!(OscillatorParams::new(0.0, 0.05, 1.0).is_err());
        assert!(OscillatorParams::new(1.0, 1.0, 1.0).is_err());
        assert!(OscillatorParams::new(1.0, -0.1, 1.0).is_err());
        assert!(OscillatorParams::new(1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn derived_coefficients() {
        let o = unit_osc();
        assert!((o.damping() - 0.2 * PI).abs() < 1e-15);
        assert!((o.stiffness() - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn response_kernel_values() {
        let p = kp(1.0, 1.0);
        assert!((response_kernel(&p, ResponseKind::Vel, ResponseKind::Vel, 0.3, 0.3) - 1.0).abs() < 1e-15);
        assert!((response_kernel(&p, ResponseKind::Disp, ResponseKind::Acc, 0.3, 0.3) + 1.0).abs() < 1e-15);
        assert_eq!(
            response_kernel(&p, ResponseKind::Acc, ResponseKind::Disp, 0.9, 0.2),
            response_kernel(&p, ResponseKind::Disp, ResponseKind::Acc, 0.2, 0.9)
        );
    }

    #[test]
    fn force_response_zero_lag() {
        let o = unit_osc();
        let v = force_response_kernel(&o, &kp(1.0, 1.0), ResponseKind::Disp, 0.5, 0.5);
        let expected = o.omega_n() * o.omega_n() - 1.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 38.478).abs() < 1e-3);
    }

    #[test]
    fn undamped_force_response_drops_velocity_term() {
        let o = OscillatorParams::new(2.0, 0.0, 3.0).unwrap();
        let p = kp(0.8, 0.6);
        let t = 1.1;
        let direct = 2.0 * se_kernel_deriv(&p, DerivOrder::new(Order::Two, Order::Zero), t, t)
            + o.stiffness() * se_kernel_deriv(&p, DerivOrder::new(Order::Zero, Order::Zero), t, t);
        let v = force_response_kernel(&o, &p, ResponseKind::Disp, t, t);
        assert!((v - direct).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn force_force_zero_lag_closed_form() {
        let o = unit_osc();
        let (m, c, k) = (o.mass(), o.damping(), o.stiffness());
        let closed = 3.0 * m * m + c * c - 2.0 * m * k + k * k;
        let v = force_force_kernel(&o, &kp(1.0, 1.0), 0.0, 0.0);
        assert!(((v - closed) / closed).abs() < 1e-14);
    }

    #[test]
    fn force_force_reduces_to_acceleration_covariance() {
        // ζ = 0 and ω_n → 0 leaves only m·∂² on each side.
        let o = OscillatorParams::new(1.0, 0.0, 1e-9).unwrap();
        let p = kp(1.3, 0.4);
        let a = force_force_kernel(&o, &p, 0.2, 0.5);
        let b = se_kernel_deriv(&p, DerivOrder::new(Order::Two, Order::Two), 0.2, 0.5);
        assert!((a - b).abs() < 1e-9 * b.abs());
    }

    #[test]
    fn zero_forcing_gives_zero_response() {
        let f = ForcingSignal::from_fn(400, 200.0, |_| 0.0);
        let r = simulate_response(&unit_osc(), &f, 0.0, 0.0).unwrap();
        assert!(r.u.iter().chain(&r.u_dot).chain(&r.u_ddot).all(|&x| x == 0.0));
    }

    #[test]
    fn static_load_settles_to_unit_deflection() {
        let o = unit_osc();
        let k = o.stiffness();
        let f = ForcingSignal::from_fn(200 * 60, 200.0, |_| k);
        let r = simulate_response(&o, &f, 0.0, 0.0).unwrap();
        assert!((r.u.last().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resonant_steady_state_amplitude() {
        let o = unit_osc();
        let w = o.omega_n();
        // e^{-ζωt} at t = 60 s is ~7e-9, transients are gone
        let f = ForcingSignal::from_fn(200 * 60, 200.0, |t| (w * t).sin());
        let r = simulate_response(&o, &f, 0.0, 0.0).unwrap();
        let tail = &r.u[r.len() - 400..];
        let amp = tail.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let expected = 1.0 / (2.0 * o.zeta() * o.stiffness());
        assert!(
            (amp - expected).abs() < 1e-4 * expected,
            "amp {amp} expected {expected}"
        );
        assert!((expected - 0.2533).abs() < 1e-4);
    }

    /// Exact solution of the resonantly forced oscillator from rest, built from
    /// the particular solution plus the damped homogeneous part.
    fn analytic_resonant(o: &OscillatorParams, t: f64) -> f64 {
        let (w, z) = (o.omega_n(), o.zeta());
        let wd = w * (1.0 - z * z).sqrt();
        let a = 1.0 / (2.0 * z * o.stiffness());
        // particular: -a cos(wt); homogeneous matches u(0)=0, u'(0)=0
        let c1 = a;
        let c2 = (z * w * c1) / wd;
        -a * (w * t).cos() + (-z * w * t).exp() * (c1 * (wd * t).cos() + c2 * (wd * t).sin())
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let o = unit_osc();
        let w = o.omega_n();
        let err = |fs: f64| {
            let n = (10.0 * fs) as usize + 1;
            let f = ForcingSignal::from_fn(n, fs, |t| (w * t).sin());
            let r = simulate_response(&o, &f, 0.0, 0.0).unwrap();
            r.times
                .iter()
                .zip(&r.u)
                .map(|(&t, &u)| (u - analytic_resonant(&o, t)).abs())
                .fold(0.0f64, f64::max)
        };
        let coarse = err(25.0);
        let fine = err(50.0);
        let ratio = coarse / fine;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({coarse} / {fine})");
    }

    #[test]
    fn free_decay_energy_is_non_increasing() {
        let o = unit_osc();
        let f = ForcingSignal::from_fn(2000, 200.0, |_| 0.0);
        let r = simulate_response(&o, &f, 0.3, -0.5).unwrap();
        let e: Vec<f64> = r.u.iter().zip(&r.u_dot).map(|(&u, &v)| o.energy(u, v)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn acceleration_satisfies_equation_of_motion() {
        let o = unit_osc();
        let f = ForcingSignal::from_fn(500, 200.0, |t| (3.0 * t).cos() + 0.2);
        let r = simulate_response(&o, &f, 0.01, 0.0).unwrap();
        for i in 0..r.len() {
            let res = o.mass() * r.u_ddot[i] + o.damping() * r.u_dot[i] + o.stiffness() * r.u[i] - f.values()[i];
            assert!(res.abs() < 1e-12);
        }
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let f = ForcingSignal::new(vec![0.0, 0.1, 0.25, 0.3], vec![0.0; 4]).unwrap();
        let err = simulate_response(&unit_osc(), &f, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonUniformGrid { index: 1, .. }));
    }

    #[test]
    fn midpoint_interpolation_is_exact_for_cubics() {
        let p = |x: f64| 0.3 * x * x * x - x * x + 2.0 * x - 1.0;
        let s: Vec<f64> = (0..8).map(|i| p(i as f64)).collect();
        for (i, m) in midpoint_values(&s).iter().enumerate() {
            assert!((m - p(i as f64 + 0.5)).abs() < 1e-12);
        }
    }
}
