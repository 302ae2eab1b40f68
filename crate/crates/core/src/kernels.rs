//! Squared-exponential kernel and its exact time derivatives.
//!
//! With lag `r = t − t′` and `x = r/ℓ`, the base kernel is
//! `k(r) = σ²·exp(−x²/2)`. Since `∂/∂t = d/dr` and `∂/∂t′ = −d/dr`,
//!
//! ```text
//! ∂^{a+b} k / ∂tᵃ ∂t′ᵇ = σ² · (−1)ᵃ · He_{a+b}(x) · ℓ^{−(a+b)} · exp(−x²/2)
//! ```
//!
//! where `He_n` are the probabilists' Hermite polynomials. The length-scale
//! gradient follows from `He_n′ = n·He_{n−1}`:
//!
//! ```text
//! ∂/∂ℓ = σ² · (−1)ᵃ · ℓ^{−n−1} · exp(−x²/2) · [He_n(x)·(x² − n) − n·x·He_{n−1}(x)]
//! ```
//!
//! Values and gradients are exposed in natural (not log) parameter space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude and length scale of the squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelParams", into = "RawKernelParams")]
pub struct KernelParams {
    sigma_s: f64,
    ell: f64,
}

#[derive(Serialize, Deserialize)]
struct RawKernelParams {
    sigma_s: f64,
    ell: f64,
}

impl TryFrom<RawKernelParams> for KernelParams {
    type Error = Error;

    fn try_from(raw: RawKernelParams) -> Result<Self> {
        KernelParams::new(raw.sigma_s, raw.ell)
    }
}

impl From<KernelParams> for RawKernelParams {
    fn from(p: KernelParams) -> Self {
        RawKernelParams {
            sigma_s: p.sigma_s,
            ell: p.ell,
        }
    }
}

impl KernelParams {
    pub fn new(sigma_s: f64, ell: f64) -> Result<Self> {
        if !(sigma_s.is_finite() && sigma_s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_s must be finite and positive, got {sigma_s}"
            )));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be finite and positive, got {ell}"
            )));
        }
        Ok(Self { sigma_s, ell })
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }
}

/// Derivative order in one time argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Order {
    Zero = 0,
    One = 1,
    Two = 2,
}

impl Order {
    pub const ALL: [Order; 3] = [Order::Zero, Order::One, Order::Two];

    pub fn as_usize(self) -> usize {
        self as usize
    }
}

/// Derivative orders `(a, b)` in `(t, t′)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DerivOrder {
    pub a: Order,
    pub b: Order,
}

impl DerivOrder {
    pub const fn new(a: Order, b: Order) -> Self {
        Self { a, b }
    }

    pub fn transpose(self) -> Self {
        Self { a: self.b, b: self.a }
    }

    fn total(self) -> usize {
        self.a.as_usize() + self.b.as_usize()
    }

    fn sign(self) -> f64 {
        if self.a == Order::One {
            -1.0
        } else {
            1.0
        }
    }
}

/// Probabilists' Hermite polynomials `He_0..He_4`.
#[inline]
fn hermite(n: usize, x: f64) -> f64 {
    let x2 = x * x;
    match n {
        0 => 1.0,
        1 => x,
        2 => x2 - 1.0,
        3 => x * (x2 - 3.0),
        4 => x2 * (x2 - 6.0) + 3.0,
        _ => unreachable!("derivative order above (2,2)"),
    }
}

/// `σ²·exp(−(t−t′)²/(2ℓ²))`.
pub fn se_kernel(params: &KernelParams, t: f64, t_prime: f64) -> f64 {
    let x = (t - t_prime) / params.ell;
    params.sigma_s * params.sigma_s * (-0.5 * x * x).exp()
}

/// `∂^{a+b} k(t, t′) / ∂tᵃ ∂t′ᵇ` in closed form.
pub fn se_kernel_deriv(params: &KernelParams, order: DerivOrder, t: f64, t_prime: f64) -> f64 {
    let n = order.total();
    let x = (t - t_prime) / params.ell;
    let scale = params.sigma_s * params.sigma_s * params.ell.powi(-(n as i32));
    order.sign() * scale * hermite(n, x) * (-0.5 * x * x).exp()
}

/// Gradients `(∂/∂σ_s, ∂/∂ℓ)` of [`se_kernel_deriv`].
pub fn se_kernel_grad(params: &KernelParams, order: DerivOrder, t: f64, t_prime: f64) -> (f64, f64) {
    let (value, d_ell) = se_kernel_deriv_and_dell(params, order, t, t_prime);
    (2.0 * value / params.sigma_s, d_ell)
}

/// All nine derivative kernels `k^{(a,b)}(t, t′)` sharing one exponential,
/// indexed `[a][b]`.
pub fn se_kernel_deriv_table(params: &KernelParams, t: f64, t_prime: f64) -> [[f64; 3]; 3] {
    let x = (t - t_prime) / params.ell;
    let g = params.sigma_s * params.sigma_s * (-0.5 * x * x).exp();
    let inv = 1.0 / params.ell;
    let mut scaled = [0.0; 5];
    let mut p = g;
    for (n, s) in scaled.iter_mut().enumerate() {
        *s = hermite(n, x) * p;
        p *= inv;
    }
    let mut out = [[0.0; 3]; 3];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let sign = if a == 1 { -1.0 } else { 1.0 };
            *v = sign * scaled[a + b];
        }
    }
    out
}

/// Value and `∂/∂ℓ` sharing the exponential; used in covariance assembly.
#[inline]
pub(crate) fn se_kernel_deriv_and_dell(params: &KernelParams, order: DerivOrder, t: f64, t_prime: f64) -> (f64, f64) {
    let n = order.total();
    let ell = params.ell;
    let x = (t - t_prime) / ell;
    let g = (-0.5 * x * x).exp();
    let s2 = params.sigma_s * params.sigma_s;
    let sign = order.sign();
    let he = hermite(n, x);
    let value = sign * s2 * ell.powi(-(n as i32)) * he * g;
    let he_prev = if n == 0 { 0.0 } else { hermite(n - 1, x) };
    let bracket = he * (x * x - n as f64) - n as f64 * x * he_prev;
    let d_ell = sign * s2 * ell.powi(-(n as i32) - 1) * g * bracket;
    (value, d_ell)
}
