//! Run configuration, read from TOML.
//!
//! Every section rejects unknown keys. Sections an experiment does not use may
//! be omitted; each experiment checks for the sections it needs in
//! [`crate::experiments::Experiment::validate`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use forcegp::oscillator::{OscillatorParams, ResponseKind};
use forcegp::signal::{Alignment, SamplingSpec, Selection};
use forcegp::trainer::{FixedNoise, InitRanges, TrainConfig};
use forcegp::windsim::{ModalParticipation, SectionAeroParams, WindSpec};
use serde::{Deserialize, Serialize};

use crate::csvio::ColumnSpec;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub oscillator: Option<OscillatorSection>,
    pub forcing: Option<ForcingSection>,
    pub noise: Option<NoiseSection>,
    pub sampling: Option<SamplingSection>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub prediction: PredictionSection,
    pub sweep: Option<SweepSection>,
    pub wind: Option<WindSpec>,
    pub aero: Option<SectionAeroParams>,
    #[serde(default)]
    pub modes: Vec<ModeSection>,
    pub input: Option<InputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Registered experiment name, e.g. `sdof` or `buffeting`.
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSection {
    pub mass: f64,
    pub zeta: f64,
    /// Circular natural frequency (rad/s); give this or `frequency_hz`.
    pub omega_n: Option<f64>,
    pub frequency_hz: Option<f64>,
}

impl OscillatorSection {
    pub fn params(&self) -> CliResult<OscillatorParams> {
        let omega = match (self.omega_n, self.frequency_hz) {
            (Some(w), None) => w,
            (None, Some(f)) => 2.0 * PI * f,
            _ => {
                return Err(CliError::Config(
                    "oscillator: give exactly one of omega_n, frequency_hz".into(),
                ))
            }
        };
        Ok(OscillatorParams::new(self.mass, self.zeta, omega)?)
    }
}

/// Harmonic load `A·sin(2π f t)` sampled at `f_s` for `duration` seconds,
/// applied to an oscillator starting at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSection {
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Defaults to the oscillator's natural frequency.
    pub frequency_hz: Option<f64>,
    pub duration: f64,
    pub f_s: f64,
}

fn one() -> f64 {
    1.0
}

impl ForcingSection {
    pub fn samples(&self) -> CliResult<usize> {
        if !(self.duration > 0.0 && self.f_s > 0.0) {
            return Err(CliError::Config("forcing: duration and f_s must be positive".into()));
        }
        let count = self.duration * self.f_s;
        let n = count.round();
        if (count - n).abs() > 1e-9 * count {
            return Err(CliError::Config(format!(
                "forcing: duration * f_s = {count} is not an integer"
            )));
        }
        Ok(n as usize + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// Interval between training points (s).
    pub dt: f64,
    pub kinds: Vec<ResponseKind>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub align: Alignment,
}

fn default_warmup() -> f64 {
    0.1
}

impl SamplingSection {
    pub fn spec(&self) -> CliResult<SamplingSpec> {
        if self.kinds.is_empty() {
            return Err(CliError::Config("sampling: kinds must not be empty".into()));
        }
        let mut kinds = self.kinds.clone();
        kinds.sort_by_key(|k| k.index());
        kinds.dedup();
        Ok(SamplingSpec {
            selection: Selection::Interval {
                dt: self.dt,
                align: self.align,
            },
            kinds,
            warmup_fraction: self.warmup_fraction,
        })
    }
}

/// Training options; the seed comes from `[experiment]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub init_ranges: InitRanges,
    pub fixed_noise: FixedNoise,
    pub parallel: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            restarts: d.restarts,
            max_iters: d.max_iters,
            grad_tolerance: d.grad_tolerance,
            init_ranges: d.init_ranges,
            fixed_noise: d.fixed_noise,
            parallel: d.parallel,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            grad_tolerance: self.grad_tolerance,
            init_ranges: self.init_ranges.clone(),
            fixed_noise: self.fixed_noise.clone(),
            seed,
            parallel: self.parallel,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Span {
    /// From the first to the last training time.
    #[default]
    Training,
    /// The whole simulated record.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionSection {
    /// Evaluation step (s); must be a multiple of the record step. Defaults to the record step.
    pub dt: Option<f64>,
    pub span: Span,
    /// Welch segment length in samples; defaults to eight half-overlapping segments.
    pub psd_segment: Option<usize>,
    pub psd_overlap: f64,
}

impl Default for PredictionSection {
    fn default() -> Self {
        Self {
            dt: None,
            span: Span::Training,
            psd_segment: None,
            psd_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub snr: Vec<f64>,
    /// Replicates per cell.
    pub seeds: usize,
    #[serde(default)]
    pub datatype_sets: Vec<Vec<ResponseKind>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub name: Option<String>,
    /// Modal mass per unit span.
    pub mass: f64,
    pub zeta: f64,
    pub frequency_hz: f64,
    pub participation: ModalParticipation,
    /// Mode-shape ordinate at the point where the global response is reported.
    #[serde(default)]
    pub global_weight: f64,
}

impl ModeSection {
    pub fn params(&self) -> CliResult<OscillatorParams> {
        Ok(OscillatorParams::new(
            self.mass,
            self.zeta,
            2.0 * PI * self.frequency_hz,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub path: PathBuf,
    pub columns: Option<ColumnSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads and parses a config file. Relative paths inside it (input data)
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(input), Some(dir)) = (cfg.input.as_mut(), path.parent()) {
            if input.path.is_relative() {
                input.path = dir.join(&input.path);
            }
        }
        Ok((cfg, text))
    }

    pub fn oscillator(&self) -> CliResult<OscillatorParams> {
        self.oscillator.as_ref().ok_or_else(|| missing("oscillator"))?.params()
    }

    pub fn forcing(&self) -> CliResult<&ForcingSection> {
        self.forcing.as_ref().ok_or_else(|| missing("forcing"))
    }

    pub fn sampling(&self) -> CliResult<&SamplingSection> {
        self.sampling.as_ref().ok_or_else(|| missing("sampling"))
    }

    pub fn sweep(&self) -> CliResult<&SweepSection> {
        self.sweep.as_ref().ok_or_else(|| missing("sweep"))
    }

    pub fn snr(&self) -> Option<f64> {
        self.noise.map(|n| n.snr)
    }
}

pub fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
kind = "sdof"
output_dir = "out"

[oscillator]
mass = 1.0
zeta = 0.05
frequency_hz = 1.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.seed, 0);
        assert_eq!(cfg.training.restarts, 8);
        assert_eq!(cfg.prediction.span, Span::Training);
        let osc = cfg.oscillator().unwrap();
        assert!((osc.omega_n() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("zeta = 0.05", "zeta = 0.05\ndamping = 0.1");
        assert!(matches!(RunConfig::from_toml(&bad), Err(CliError::Config(_))));
        let bad = format!("{MINIMAL}\n[training]\nseed = 4\n");
        assert!(RunConfig::from_toml(&bad).is_err());
        let bad = format!("{MINIMAL}\n[unknown]\nx = 1\n");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn both_frequency_forms_is_an_error() {
        let bad = MINIMAL.replace("frequency_hz = 1.0", "frequency_hz = 1.0\nomega_n = 6.28");
        let cfg = RunConfig::from_toml(&bad).unwrap();
        assert!(cfg.oscillator().is_err());
    }

    #[test]
    fn invalid_oscillator_maps_to_config_exit_code() {
        let bad = MINIMAL.replace("zeta = 0.05", "zeta = 1.5");
        let err = RunConfig::from_toml(&bad).unwrap().oscillator().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn fractional_sample_count_rejected() {
        let f = ForcingSection {
            amplitude: 1.0,
            frequency_hz: None,
            duration: 1.005,
            f_s: 100.0,
        };
        assert!(f.samples().is_err());
        assert_eq!(ForcingSection { duration: 1.0, ..f }.samples().unwrap(), 101);
    }

    #[test]
    fn sampling_kinds_are_canonicalized() {
        let s = SamplingSection {
            dt: 0.1,
            kinds: vec![ResponseKind::Acc, ResponseKind::Disp, ResponseKind::Acc],
            warmup_fraction: 0.1,
            align: Alignment::Exact,
        };
        assert_eq!(s.spec().unwrap().kinds, vec![ResponseKind::Disp, ResponseKind::Acc]);
    }
}
