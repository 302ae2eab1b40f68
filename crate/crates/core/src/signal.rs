//! Measurement corruption, training-point selection and error metrics.

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Channel, MeasurementSet};
use crate::oscillator::{ResponseKind, ResponseRecord};
use crate::rng::{rng_from, sub_seed};

pub fn rms(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    (series.iter().map(|x| x * x).sum::<f64>() / series.len() as f64).sqrt()
}

/// Noise level as an RMS-based signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr: f64, seed: u64) -> Result<Self> {
        if !(snr > 0.0) {
            return Err(Error::InvalidParameter(format!("snr must be positive, got {snr}")));
        }
        Ok(Self { snr, seed })
    }
}

/// Adds white Gaussian noise with `σ = RMS(series)/snr`; returns the noisy series and `σ`.
pub fn add_noise(series: &[f64], spec: &NoiseSpec) -> Result<(Vec<f64>, f64)> {
    if !(spec.snr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "snr must be positive, got {}",
            spec.snr
        )));
    }
    let r = rms(series);
    if !(r > 0.0) {
        return Err(Error::ZeroRms);
    }
    let sigma = r / spec.snr;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = rng_from(spec.seed);
    let noisy = series.iter().map(|x| x + normal.sample(&mut rng)).collect();
    Ok((noisy, sigma))
}

/// Corrupts every response type of `record` at the same SNR with independent streams.
/// Returns the noisy record and the realized noise σ per type.
pub fn corrupt_record(record: &ResponseRecord, snr: f64, seed: u64) -> Result<(ResponseRecord, [f64; 3])> {
    let mut sigmas = [0.0; 3];
    let mut out = record.clone();
    for kind in ResponseKind::ALL {
        let spec = NoiseSpec::new(snr, sub_seed(seed, 100 + kind.index() as u64))?;
        let (noisy, s) = add_noise(record.series(kind), &spec)?;
        sigmas[kind.index()] = s;
        match kind {
            ResponseKind::Disp => out.u = noisy,
            ResponseKind::Vel => out.u_dot = noisy,
            ResponseKind::Acc => out.u_ddot = noisy,
        }
    }
    Ok((out, sigmas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// The interval must be an integer multiple of the source step.
    #[default]
    Exact,
    /// Each target time snaps to the nearest source sample.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Interval { dt: f64, align: Alignment },
    Indices(Vec<usize>),
}

/// Which samples of a record become training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub selection: Selection,
    pub kinds: Vec<ResponseKind>,
    /// Leading fraction of the record treated as transient and skipped.
    pub warmup_fraction: f64,
}

impl SamplingSpec {
    pub fn regular(dt: f64, kinds: &[ResponseKind]) -> Self {
        Self {
            selection: Selection::Interval {
                dt,
                align: Alignment::Exact,
            },
            kinds: kinds.to_vec(),
            warmup_fraction: 0.1,
        }
    }

    pub fn with_warmup(mut self, fraction: f64) -> Self {
        self.warmup_fraction = fraction;
        self
    }

    pub fn with_alignment(mut self, a: Alignment) -> Self {
        if let Selection::Interval { align, .. } = &mut self.selection {
            *align = a;
        }
        self
    }

    /// Source indices selected from `times`.
    pub fn indices(&self, times: &[f64]) -> Result<Vec<usize>> {
        let n = times.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty record".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidParameter(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        let (t0, t_end) = (times[0], times[n - 1]);
        let t_start = t0 + self.warmup_fraction * (t_end - t0);
        let i0 = times.partition_point(|&t| t < t_start - 1e-9 * (t_end - t0).abs().max(1.0));
        match &self.selection {
            Selection::Indices(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                    return Err(Error::InvalidParameter(format!(
                        "index {bad} outside record of length {n}"
                    )));
                }
                let mut v = idx.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
            Selection::Interval { dt, align } => {
                if !(*dt > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "sampling interval must be positive, got {dt}"
                    )));
                }
                if n == 1 {
                    return Ok(vec![0]);
                }
                let h = (t_end - t0) / (n - 1) as f64;
                match align {
                    Alignment::Exact => {
                        let ratio = dt / h;
                        let k = ratio.round();
                        if k < 1.0 || (ratio - k).abs() > 1e-6 * ratio {
                            return Err(Error::InvalidParameter(format!(
                                "sampling interval {dt} s is not a multiple of the source step {h} s"
                            )));
                        }
                        Ok((i0..n).step_by(k as usize).collect())
                    }
                    Alignment::Nearest => {
                        let start = times[i0.min(n - 1)];
                        let mut out: Vec<usize> = Vec::new();
                        let mut j = 0usize;
                        loop {
                            let target = start + j as f64 * dt;
                            if target > t_end + 0.5 * h {
                                break;
                            }
                            let idx = (((target - t0) / h).round() as usize).min(n - 1);
                            if out.last() != Some(&idx) {
                                out.push(idx);
                            }
                            j += 1;
                        }
                        Ok(out)
                    }
                }
            }
        }
    }
}

/// Extracts the selected samples of each requested type; other types are absent.
pub fn subsample(record: &ResponseRecord, spec: &SamplingSpec) -> Result<MeasurementSet> {
    let idx = spec.indices(&record.times)?;
    if idx.is_empty() {
        return Err(Error::InvalidParameter("sampling selected no points".into()));
    }
    let mut set = MeasurementSet::empty();
    for &kind in &spec.kinds {
        let series = record.series(kind);
        let t = idx.iter().map(|&i| record.times[i]).collect();
        let v = idx.iter().map(|&i| series[i]).collect();
        set.insert(kind, Channel::new(t, v)?);
    }
    Ok(set)
}

/// Root mean squared difference; with `normalize`, both series are first divided by `max |truth|`.
pub fn rmse(predicted: &[f64], truth: &[f64], normalize: bool) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "rmse inputs",
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter("rmse of empty series".into()));
    }
    let scale = if normalize {
        let m = truth.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(m > 0.0) {
            return Err(Error::ZeroRms);
        }
        m
    } else {
        1.0
    };
    let ss: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| ((p - t) / scale).powi(2))
        .sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// One-sided Welch spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub segments: usize,
    /// `∫S df / variance`; `None` for a constant series.
    pub parseval_ratio: Option<f64>,
}

impl PsdEstimate {
    /// Rectangle-rule integral of the density.
    pub fn total_power(&self) -> f64 {
        let df = if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        };
        self.density.iter().sum::<f64>() * df
    }
}

/// Segment length for eight half-overlapping segments covering `n` samples.
pub fn default_segment_len(n: usize) -> usize {
    (2 * n / 9).max(2)
}

/// Welch-averaged periodogram with a Hann window and per-segment mean removal.
pub fn psd(series: &[f64], f_s: f64, segment_len: usize, overlap: f64) -> Result<PsdEstimate> {
    let n = series.len();
    if segment_len < 2 {
        return Err(Error::InvalidParameter("segment length must be >= 2".into()));
    }
    if segment_len > n {
        return Err(Error::InvalidParameter(format!(
            "segment length {segment_len} exceeds series length {n}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    if !(f_s > 0.0) {
        return Err(Error::InvalidParameter("sampling rate must be positive".into()));
    }
    let step = (segment_len - (overlap * segment_len as f64).round() as usize).max(1);
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment_len as f64).cos())
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut segments = 0;
    let mut start = 0;
    while start + segment_len <= n {
        let seg = &series[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let norm = 1.0 / (f_s * w2 * segments as f64);
    let density: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (segment_len.is_multiple_of(2) && k == bins - 1) {
                1.0
            } else {
                2.0
            };
            p * norm * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * f_s / segment_len as f64).collect();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let mut est = PsdEstimate {
        freqs,
        density,
        segments,
        parseval_ratio: None,
    };
    if var > 0.0 {
        est.parseval_ratio = Some(est.total_power() / var);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(n: usize, fs: f64) -> ResponseRecord {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
        ResponseRecord {
            u: times.iter().map(|t| t.sin()).collect(),
            u_dot: times.iter().map(|t| t.cos()).collect(),
            u_ddot: times.iter().map(|t| -t.sin()).collect(),
            times,
        }
    }

    #[test]
    fn huge_snr_leaves_series_intact() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin()).collect();
        let (noisy, sigma) = add_noise(&s, &NoiseSpec::new(1e12, 1).unwrap()).unwrap();
        let r = rms(&s);
        assert!(sigma < 1e-11);
        assert!(noisy.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-9 * r));
    }

    #[test]
    fn noise_level_matches_snr() {
        let n = 20_000;
        let s: Vec<f64> = (0..n)
            .map(|i| std::f64::consts::SQRT_2 * (i as f64 * 0.01).sin())
            .collect();
        let (noisy, sigma) = add_noise(&s, &NoiseSpec::new(20.0, 5).unwrap()).unwrap();
        let diff: Vec<f64> = noisy.iter().zip(&s).map(|(a, b)| a - b).collect();
        let emp = rms(&diff);
        assert!((sigma - rms(&s) / 20.0).abs() < 1e-15);
        assert!((emp - 0.05).abs() <= 0.05 * 0.05, "empirical {emp}");
    }

    #[test]
    fn noise_is_reproducible_and_zero_rms_rejected() {
        let s = [1.0, -1.0, 2.0];
        let spec = NoiseSpec::new(5.0, 9).unwrap();
        assert_eq!(add_noise(&s, &spec).unwrap(), add_noise(&s, &spec).unwrap());
        assert!(matches!(add_noise(&[0.0, 0.0], &spec), Err(Error::ZeroRms)));
    }

    #[test]
    fn corrupted_types_use_distinct_streams() {
        let r = record(500, 10.0);
        let (noisy, _) = corrupt_record(&r, 10.0, 3).unwrap();
        let du: Vec<f64> = noisy.u.iter().zip(&r.u).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = noisy.u_dot.iter().zip(&r.u_dot).map(|(a, b)| a - b).collect();
        let corr: f64 = du.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>() / (rms(&du) * rms(&dv) * 500.0);
        assert!(corr.abs() < 0.2);
    }

    #[test]
    fn full_rate_sampling_returns_full_record() {
        let r = record(50, 10.0);
        let set = subsample(&r, &SamplingSpec::regular(0.1, &[ResponseKind::Disp]).with_warmup(0.0)).unwrap();
        assert_eq!(set.channel(ResponseKind::Disp).unwrap().times, r.times);
        assert!(!set.has(ResponseKind::Vel) && !set.has(ResponseKind::Acc));
    }

    #[test]
    fn bridge_interval_counts() {
        let r = record(6000, 10.0);
        let spec = SamplingSpec::regular(1.25, &ResponseKind::ALL).with_warmup(0.0);
        assert!(subsample(&r, &spec).is_err());
        let set = subsample(&r, &spec.clone().with_alignment(Alignment::Nearest)).unwrap();
        assert_eq!(set.channel(ResponseKind::Acc).unwrap().len(), 480);
        let r20 = record(12_000, 20.0);
        let set = subsample(&r20, &spec).unwrap();
        assert_eq!(set.channel(ResponseKind::Disp).unwrap().len(), 480);
    }

    #[test]
    fn warmup_is_skipped() {
        let r = record(101, 10.0);
        let set = subsample(&r, &SamplingSpec::regular(1.0, &[ResponseKind::Disp])).unwrap();
        let t = &set.channel(ResponseKind::Disp).unwrap().times;
        assert!((t[0] - 1.0).abs() < 1e-12);
        assert_eq!(t.len(), 10);
    }

    #[test]
    fn rmse_cases() {
        let a = [1.0, -2.0, 3.0];
        assert_eq!(rmse(&a, &a, false).unwrap(), 0.0);
        assert!(matches!(rmse(&a, &[0.0; 3], true), Err(Error::ZeroRms)));
        let truth = [2.0, -4.0, 1.0];
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.4).collect();
        assert!((rmse(&shifted, &truth, true).unwrap() - 0.1).abs() < 1e-12);
        assert!(rmse(&a, &truth[..2], false).is_err());
    }

    #[test]
    fn sinusoid_psd_peak_and_power() {
        let fs = 100.0;
        let n = 8192;
        let (amp, f0) = (2.0, 5.0);
        let s: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
            .collect();
        let est = psd(&s, fs, 1024, 0.5).unwrap();
        let (peak, _) = est
            .density
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        assert!((est.freqs[peak] - f0).abs() <= fs / 1024.0);
        assert!((est.total_power() - amp * amp / 2.0).abs() <= 0.05 * amp * amp / 2.0);
    }

    #[test]
    fn white_noise_psd_is_flat() {
        let fs = 50.0;
        let sigma = 0.7;
        let s: Vec<f64> = {
            let normal = Normal::new(0.0, sigma).unwrap();
            let mut rng = rng_from(17);
            (0..200_000).map(|_| normal.sample(&mut rng)).collect()
        };
        let est = psd(&s, fs, 512, 0.5).unwrap();
        let inner = &est.density[1..est.density.len() - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        let expected = sigma * sigma / (fs / 2.0);
        assert!((mean - expected).abs() <= 0.1 * expected, "{mean} vs {expected}");
        let ratio = est.parseval_ratio.unwrap();
        assert!((ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_series_psd_is_zero() {
        let est = psd(&[0.0; 256], 10.0, 64, 0.5).unwrap();
        assert!(est.density.iter().all(|&v| v == 0.0));
        assert!(est.parseval_ratio.is_none());
        assert!(psd(&[0.0; 10], 10.0, 64, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 1..40), shift in -1.0f64..1.0) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + shift).collect();
            prop_assert_eq!(rmse(&a, &b, false).unwrap(), rmse(&b, &a, false).unwrap());
        }

        #[test]
        fn selected_times_are_subset(dt_steps in 1usize..20, warm in 0.0f64..0.5) {
            let r = record(300, 20.0);
            let spec = SamplingSpec::regular(dt_steps as f64 / 20.0, &[ResponseKind::Disp]).with_warmup(warm);
            let set = subsample(&r, &spec).unwrap();
            for t in &set.channel(ResponseKind::Disp).unwrap().times {
                prop_assert!(r.times.contains(t));
            }
        }
    }
}
