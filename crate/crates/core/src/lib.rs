//! Physics-informed Gaussian process reconstruction of latent forces.
//!
//! A harmonic oscillator `m·ü + c·u̇ + k·u = F` links measured responses to the
//! force that produced them. Placing a squared-exponential prior on the
//! displacement and pushing it through the oscillator operator yields closed-form
//! covariances between displacement, velocity, acceleration and force. Training
//! maximizes the marginal likelihood of heterogeneous response data; conditioning
//! then gives the posterior force.
//!
//! Modules:
//!
//! - [`kernels`]: squared-exponential kernel, its time derivatives and hyperparameter gradients.
//! - [`oscillator`]: operator-transformed covariances and an RK4 response simulator.
//! - [`gp`]: block covariance assembly, factorization and the log marginal likelihood.
//! - [`trainer`]: multi-start BFGS maximum likelihood estimation.
//! - [`predictor`]: posterior force/response inference, sampling and modal superposition.
//! - [`windsim`]: von Kármán turbulence and quasi-steady buffeting of a bridge section.
//! - [`signal`]: noise injection, subsampling, RMSE and Welch PSD.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gp;
pub mod kernels;
pub mod oscillator;
pub mod predictor;
pub mod rng;
pub mod signal;
pub mod trainer;
pub mod windsim;

pub use error::{Error, Result};
pub use gp::{FactoredCovariance, Hyperparameters, MeasurementSet};
pub use kernels::{DerivOrder, KernelParams, Order};
pub use oscillator::{ForcingSignal, OscillatorParams, ResponseKind, ResponseRecord};
pub use predictor::{ForcePosterior, Posterior};
pub use trainer::{TrainConfig, TrainedModel};
