//! Turbulent wind synthesis and quasi-steady buffeting of a 2D deck section.
//!
//! Wind fluctuations `u` (along-wind) and `w` (vertical) are synthesized by the
//! spectral representation method from one-sided von Kármán spectra. Section
//! forces follow the quasi-steady model: each force component sees its own
//! relative velocity `U_r` and inflow angle `φ`, evaluated at its aerodynamic
//! centre, and static coefficient curves at the effective angle of attack
//! `α_e = α_s + α + φ`.
//!
//! Axes: `p` and `D` positive downwind, `h` and `L` positive downward, `w`
//! positive upward, `α` and `M` nose-up. An upward gust and a downward section
//! velocity both raise the angle of attack, so in these axes a lift curve with
//! positive physical slope has a negative `C_L'`.
//!
//! Forces are per unit span. The modal masses passed to [`simulate_buffeting`]
//! must use the same per-unit-span convention.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillator::{
    midpoint_values, rk4_modal_step, uniform_step, ForcingSignal, OscillatorParams, ResponseRecord, Stage,
};
use crate::rng::{rng_from, sub_seed};

/// Polynomial in the effective angle (rad), ascending coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial(self.0.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }
}

/// Static drag, lift and moment coefficient curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientCurves {
    pub drag: Polynomial,
    pub lift: Polynomial,
    pub moment: Polynomial,
}

/// Aerodynamic centres as chord fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeroCentres {
    pub drag: f64,
    pub lift: f64,
    pub moment: f64,
}

impl Default for AeroCentres {
    fn default() -> Self {
        Self {
            drag: 0.0,
            lift: 0.25,
            moment: 0.25,
        }
    }
}

/// Projection of wind-axis forces onto the drag direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DragConvention {
    /// `D = F_L·sin φ_D − F_D·cos φ_D`.
    #[default]
    AsPrinted,
    /// `D = F_D·cos φ_D + F_L·sin φ_D`.
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionAeroParams {
    /// Chord `B` (m).
    pub chord: f64,
    /// Depth `H` (m); informational, coefficients are referenced to the chord.
    pub depth: f64,
    /// Air density (kg/m³).
    pub rho: f64,
    /// Static-equilibrium angle of attack (rad).
    pub alpha_s: f64,
    pub coefficients: CoefficientCurves,
    #[serde(default)]
    pub aero_centres: AeroCentres,
    /// Coefficient curves are only evaluated for `|α_e|` up to this many degrees.
    #[serde(default = "default_validity_deg")]
    pub validity_deg: f64,
    #[serde(default)]
    pub drag_convention: DragConvention,
}

fn default_validity_deg() -> f64 {
    10.0
}

impl SectionAeroParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chord", self.chord),
            ("depth", self.depth),
            ("rho", self.rho),
            ("validity_deg", self.validity_deg),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.alpha_s.is_finite() {
            return Err(Error::InvalidParameter("alpha_s must be finite".into()));
        }
        Ok(())
    }

    fn centre(&self, which: ForceComponent) -> f64 {
        match which {
            ForceComponent::Drag => self.aero_centres.drag,
            ForceComponent::Lift => self.aero_centres.lift,
            ForceComponent::Moment => self.aero_centres.moment,
        }
    }

    fn curve(&self, which: ForceComponent) -> &Polynomial {
        match which {
            ForceComponent::Drag => &self.coefficients.drag,
            ForceComponent::Lift => &self.coefficients.lift,
            ForceComponent::Moment => &self.coefficients.moment,
        }
    }

    /// Coefficient value with validity-range check.
    pub fn coefficient(&self, which: ForceComponent, alpha_e: f64) -> Result<f64> {
        let limit = self.validity_deg.to_radians();
        if !(alpha_e.abs() <= limit) {
            return Err(Error::CoefficientRange {
                component: which.name(),
                alpha_deg: alpha_e.to_degrees(),
                limit_deg: self.validity_deg,
            });
        }
        Ok(self.curve(which).eval(alpha_e))
    }

    /// Largest `|C|` over the validity range, sampled.
    fn coefficient_bound(&self, which: ForceComponent) -> f64 {
        let limit = self.validity_deg.to_radians();
        (0..=40)
            .map(|i| self.curve(which).eval(-limit + 2.0 * limit * i as f64 / 40.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceComponent {
    Drag,
    Lift,
    Moment,
}

impl ForceComponent {
    pub fn name(self) -> &'static str {
        match self {
            ForceComponent::Drag => "drag",
            ForceComponent::Lift => "lift",
            ForceComponent::Moment => "moment",
        }
    }
}

/// Section displacements and velocities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SectionState {
    pub p: f64,
    pub h: f64,
    pub alpha: f64,
    pub p_dot: f64,
    pub h_dot: f64,
    pub alpha_dot: f64,
}

/// Instantaneous wind: mean speed plus fluctuations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindSample {
    pub mean: f64,
    pub u: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveFlow {
    pub alpha_e: f64,
    pub u_r: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AeroForces {
    pub drag: f64,
    pub lift: f64,
    pub moment: f64,
}

/// Effective angle of attack, relative speed and inflow angle for one force component.
pub fn effective_angle(
    params: &SectionAeroParams,
    state: &SectionState,
    wind: &WindSample,
    which: ForceComponent,
) -> Result<EffectiveFlow> {
    let horizontal = wind.mean + wind.u - state.p_dot;
    if horizontal.abs() < 1e-9 {
        return Err(Error::DegenerateFlow(horizontal));
    }
    let vertical = wind.w + state.h_dot + params.centre(which) * params.chord * state.alpha_dot;
    let phi = vertical.atan2(horizontal);
    Ok(EffectiveFlow {
        alpha_e: params.alpha_s + state.alpha + phi,
        u_r: (horizontal * horizontal + vertical * vertical).sqrt(),
        phi,
    })
}

/// Quasi-steady drag, lift and moment per unit span.
pub fn quasi_steady_forces(params: &SectionAeroParams, state: &SectionState, wind: &WindSample) -> Result<AeroForces> {
    let b = params.chord;
    let q = |u_r: f64| 0.5 * params.rho * u_r * u_r;

    let fd = effective_angle(params, state, wind, ForceComponent::Drag)?;
    let fl = effective_angle(params, state, wind, ForceComponent::Lift)?;
    let fm = effective_angle(params, state, wind, ForceComponent::Moment)?;

    // wind-axis forces, each at its own aerodynamic centre
    let drag_at =
        |f: &EffectiveFlow| -> Result<f64> { Ok(q(f.u_r) * b * params.coefficient(ForceComponent::Drag, f.alpha_e)?) };
    let lift_at =
        |f: &EffectiveFlow| -> Result<f64> { Ok(q(f.u_r) * b * params.coefficient(ForceComponent::Lift, f.alpha_e)?) };

    let (f_d_d, f_l_d) = (drag_at(&fd)?, lift_at(&fd)?);
    let (f_d_l, f_l_l) = (drag_at(&fl)?, lift_at(&fl)?);
    let f_m = q(fm.u_r) * b * b * params.coefficient(ForceComponent::Moment, fm.alpha_e)?;

    let drag = match params.drag_convention {
        DragConvention::AsPrinted => f_l_d * fd.phi.sin() - f_d_d * fd.phi.cos(),
        DragConvention::Conventional => f_d_d * fd.phi.cos() + f_l_d * fd.phi.sin(),
    };
    let lift = f_l_l * fl.phi.cos() - f_d_l * fl.phi.sin();
    Ok(AeroForces {
        drag,
        lift,
        moment: f_m,
    })
}

/// One-sided von Kármán spectrum of the along-wind component.
pub fn von_karman_u(f: f64, sigma: f64, length: f64, mean: f64) -> f64 {
    let n = f * length / mean;
    4.0 * sigma * sigma * (length / mean) / (1.0 + 70.8 * n * n).powf(5.0 / 6.0)
}

/// One-sided von Kármán spectrum of the vertical component.
pub fn von_karman_w(f: f64, sigma: f64, length: f64, mean: f64) -> f64 {
    let n = f * length / mean;
    4.0 * sigma * sigma * (length / mean) * (1.0 + 755.2 * n * n) / (1.0 + 283.2 * n * n).powf(11.0 / 6.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    /// Mean speed `U` (m/s).
    pub mean_speed: f64,
    /// Turbulence intensity `I`; `σ_u = σ_w = I·U`.
    pub intensity: f64,
    pub length_u: f64,
    pub length_w: f64,
    /// Record length (s).
    pub duration: f64,
    /// Sampling rate (Hz).
    pub f_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindField {
    pub spec: WindSpec,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub warnings: Vec<String>,
}

impl WindField {
    pub fn sample(&self, i: usize) -> WindSample {
        WindSample {
            mean: self.spec.mean_speed,
            u: self.u[i],
            w: self.w[i],
        }
    }
}

/// Spectral-representation series: harmonics at `k/T` with amplitudes
/// `sqrt(2·S(f_k)·Δf)` and uniform random phases, summed by inverse FFT.
fn synthesize(n: usize, f_s: f64, spectrum: impl Fn(f64) -> f64, seed: u64) -> Vec<f64> {
    let df = f_s / n as f64;
    let mut rng = rng_from(seed);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    // skip DC and Nyquist so the record has zero mean and variance Σ A_k²/2
    for (k, slot) in buf.iter_mut().enumerate().take(n.div_ceil(2)).skip(1) {
        let amp = (2.0 * spectrum(k as f64 * df) * df).sqrt();
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        *slot = Complex::from_polar(amp, phase);
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Synthesizes independent `u` and `w` fluctuation records.
pub fn generate_wind(spec: &WindSpec, seed: u64) -> Result<WindField> {
    for (name, v) in [
        ("mean_speed", spec.mean_speed),
        ("length_u", spec.length_u),
        ("length_w", spec.length_w),
        ("duration", spec.duration),
        ("f_s", spec.f_s),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wind {name} must be positive, got {v}"
            )));
        }
    }
    if !(spec.intensity.is_finite() && spec.intensity >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "intensity must be >= 0, got {}",
            spec.intensity
        )));
    }
    let count = spec.duration * spec.f_s;
    let n = count.round() as usize;
    if (count - n as f64).abs() > 1e-9 * count || n < 4 {
        return Err(Error::InvalidParameter(format!(
            "duration * f_s must be an integer sample count >= 4, got {count}"
        )));
    }
    let mut warnings = Vec::new();
    let scale = spec.length_u / spec.mean_speed;
    if spec.duration < 10.0 * scale {
        warnings.push(format!(
            "record of {} s is shorter than 10 L_u/U = {:.1} s; low frequencies are under-resolved",
            spec.duration,
            10.0 * scale
        ));
    }
    let sigma = spec.intensity * spec.mean_speed;
    let times = (0..n).map(|i| i as f64 / spec.f_s).collect();
    let (u, w) = if sigma == 0.0 {
        (vec![0.0; n], vec![0.0; n])
    } else {
        (
            synthesize(
                n,
                spec.f_s,
                |f| von_karman_u(f, sigma, spec.length_u, spec.mean_speed),
                sub_seed(seed, 1),
            ),
            synthesize(
                n,
                spec.f_s,
                |f| von_karman_w(f, sigma, spec.length_w, spec.mean_speed),
                sub_seed(seed, 2),
            ),
        )
    };
    Ok(WindField {
        spec: *spec,
        times,
        u,
        w,
        warnings,
    })
}

/// Mode-shape ordinates of one mode at the section: horizontal, vertical, rotation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalParticipation {
    pub p: f64,
    pub h: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuffetingOptions {
    /// Initial modal displacement and velocity per mode; zero when empty.
    pub initial: Vec<(f64, f64)>,
    /// Remove the mean-wind static force so modal coordinates are measured from
    /// static equilibrium.
    pub subtract_static: bool,
}

impl Default for BuffetingOptions {
    fn default() -> Self {
        Self {
            initial: Vec::new(),
            subtract_static: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuffetingResult {
    pub records: Vec<ResponseRecord>,
    /// Modal forces actually applied (ground truth for reconstruction).
    pub forces: Vec<ForcingSignal>,
    /// Static modal forces that were removed (zero if subtraction is off).
    pub static_forces: Vec<f64>,
}

fn section_state(q: &[f64], v: &[f64], map: &[ModalParticipation]) -> SectionState {
    let mut s = SectionState::default();
    for ((qj, vj), m) in q.iter().zip(v).zip(map) {
        s.p += m.p * qj;
        s.h += m.h * qj;
        s.alpha += m.alpha * qj;
        s.p_dot += m.p * vj;
        s.h_dot += m.h * vj;
        s.alpha_dot += m.alpha * vj;
    }
    s
}

fn modal_forces(f: &AeroForces, map: &[ModalParticipation], static_q: &[f64], out: &mut [f64]) {
    for ((o, m), s) in out.iter_mut().zip(map).zip(static_q) {
        *o = m.p * f.drag + m.h * f.lift + m.alpha * f.moment - s;
    }
}

/// Time-marches the modal equations under quasi-steady aerodynamic forcing.
pub fn simulate_buffeting(
    params: &SectionAeroParams,
    modes: &[OscillatorParams],
    mode_map: &[ModalParticipation],
    wind: &WindField,
    opts: &BuffetingOptions,
) -> Result<BuffetingResult> {
    params.validate()?;
    let nm = modes.len();
    if nm == 0 {
        return Err(Error::InvalidParameter("at least one mode is required".into()));
    }
    if mode_map.len() != nm {
        return Err(Error::LengthMismatch {
            what: "modes/mode map",
            left: nm,
            right: mode_map.len(),
        });
    }
    if !opts.initial.is_empty() && opts.initial.len() != nm {
        return Err(Error::LengthMismatch {
            what: "modes/initial conditions",
            left: nm,
            right: opts.initial.len(),
        });
    }
    let h = uniform_step(&wind.times)?;
    let n = wind.times.len();
    let u_mid = midpoint_values(&wind.u);
    let w_mid = midpoint_values(&wind.w);
    let mean = wind.spec.mean_speed;

    let static_q: Vec<f64> = if opts.subtract_static {
        let f = quasi_steady_forces(params, &SectionState::default(), &WindSample { mean, u: 0.0, w: 0.0 })?;
        let mut out = vec![0.0; nm];
        modal_forces(&f, mode_map, &vec![0.0; nm], &mut out);
        out
    } else {
        vec![0.0; nm]
    };

    let mut q: Vec<f64> = (0..nm).map(|j| opts.initial.get(j).map_or(0.0, |c| c.0)).collect();
    let mut v: Vec<f64> = (0..nm).map(|j| opts.initial.get(j).map_or(0.0, |c| c.1)).collect();

    // divergence thresholds: 1e3 × (quasi-static response to a strong gust, or the initial amplitude)
    let gust = mean * (1.0 + 4.0 * wind.spec.intensity);
    let qmax = 0.5 * params.rho * gust * gust * params.chord;
    let (cd, cl, cm) = (
        params.coefficient_bound(ForceComponent::Drag),
        params.coefficient_bound(ForceComponent::Lift),
        params.coefficient_bound(ForceComponent::Moment),
    );
    let thresholds: Vec<f64> = (0..nm)
        .map(|j| {
            let m = mode_map[j];
            let force =
                qmax * (m.p.abs() * cd + m.h.abs() * cl + m.alpha.abs() * params.chord * cm) + static_q[j].abs();
            let stat = force / modes[j].stiffness();
            let init = q[j].abs() + v[j].abs() / modes[j].omega_n();
            1e3 * stat.max(init)
        })
        .collect();

    let mut qs = vec![Vec::with_capacity(n); nm];
    let mut vs = vec![Vec::with_capacity(n); nm];
    let mut fs = vec![Vec::with_capacity(n); nm];
    let mut f_now = vec![0.0; nm];

    let eval = |i_wind: WindSample, q: &[f64], v: &[f64], out: &mut [f64]| -> Result<()> {
        let state = section_state(q, v, mode_map);
        let f = quasi_steady_forces(params, &state, &i_wind)?;
        modal_forces(&f, mode_map, &static_q, out);
        Ok(())
    };

    for i in 0..n {
        eval(wind.sample(i), &q, &v, &mut f_now)?;
        for j in 0..nm {
            qs[j].push(q[j]);
            vs[j].push(v[j]);
            fs[j].push(f_now[j]);
        }
        if i + 1 == n {
            break;
        }
        rk4_modal_step(modes, &mut q, &mut v, h, |stage, qq, vv, out| {
            let ws = match stage {
                Stage::Start => wind.sample(i),
                Stage::Mid => WindSample {
                    mean,
                    u: u_mid[i],
                    w: w_mid[i],
                },
                Stage::End => wind.sample(i + 1),
            };
            eval(ws, qq, vv, out)
        })?;
        for j in 0..nm {
            let mag = q[j].abs();
            if !mag.is_finite() || (thresholds[j] > 0.0 && mag > thresholds[j]) {
                return Err(Error::Divergence {
                    step: i + 1,
                    time: wind.times[i + 1],
                    magnitude: mag,
                    threshold: thresholds[j],
                });
            }
        }
    }

    let mut records = Vec::with_capacity(nm);
    let mut forces = Vec::with_capacity(nm);
    for j in 0..nm {
        let u_ddot = (0..n)
            .map(|i| modes[j].acceleration(fs[j][i], qs[j][i], vs[j][i]))
            .collect();
        records.push(ResponseRecord {
            times: wind.times.clone(),
            u: std::mem::take(&mut qs[j]),
            u_dot: std::mem::take(&mut vs[j]),
            u_ddot,
        });
        forces.push(ForcingSignal::new(wind.times.clone(), std::mem::take(&mut fs[j]))?);
    }
    Ok(BuffetingResult {
        records,
        forces,
        static_forces: static_q,
    })
}
