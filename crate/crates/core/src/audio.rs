//! Waveform containers and loudness metrics.
//!
//! Samples live in `[0, 1]`; metrics are computed in double precision on
//! arbitrary real-valued vectors. RMS power is floored at [`POWER_FLOOR`] so
//! that SPL and SNR stay finite for an all-zero perturbation.

use crate::error::{check_len, Error, Result};

/// Default sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Smallest RMS power used when converting to decibels.
pub const POWER_FLOOR: f64 = 1e-12;

/// A fixed-length waveform with amplitudes in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSample {
    samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<usize>,
}

impl AudioSample {
    pub fn new(samples: Vec<f64>, sample_rate: u32, label: Option<usize>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid(
                "audio sample must contain at least one value",
            ));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "sample value {v} at index {i} lies outside [0, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            label,
        })
    }

    pub fn with_label(samples: Vec<f64>, label: usize) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLE_RATE, Some(label))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Unconstrained real-valued signal, e.g. a perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector(Vec<f64>);

impl SignalVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("signal vector must be non-empty"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Root-mean-square power `sqrt(mean(v^2))`.
pub fn rms_power(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("rms power of an empty vector"));
    }
    let sum_sq: f64 = v.iter().map(|x| x * x).sum();
    Ok((sum_sq / v.len() as f64).sqrt())
}

/// Sound pressure level in dB, `20 log10(max(P(v), POWER_FLOOR))`.
pub fn spl(v: &[f64]) -> Result<f64> {
    Ok(20.0 * rms_power(v)?.max(POWER_FLOOR).log10())
}

/// Gradient of [`spl`] with respect to `v`. Zero when the power is floored.
pub fn spl_gradient(v: &[f64]) -> Result<Vec<f64>> {
    let p = rms_power(v)?;
    if p <= POWER_FLOOR {
        return Ok(vec![0.0; v.len()]);
    }
    // d/dv_n 20 log10 P = (20 / ln 10) * v_n / (N P^2)
    let scale = 20.0 / std::f64::consts::LN_10 / (v.len() as f64 * p * p);
    Ok(v.iter().map(|x| scale * x).collect())
}

/// Signal-to-noise ratio `20 log10(P(x) / P(v))` in dB.
pub fn snr(x: &[f64], v: &[f64]) -> Result<f64> {
    check_len(x.len(), v.len())?;
    let px = rms_power(x)?.max(POWER_FLOOR);
    let pv = rms_power(v)?.max(POWER_FLOOR);
    Ok(20.0 * (px / pv).log10())
}

fn peak_db(v: &[f64]) -> Option<f64> {
    v.iter()
        .copied()
        .filter(|a| *a > 0.0)
        .fold(None, |acc: Option<f64>, a| {
            Some(acc.map_or(a, |m| m.max(a)))
        })
        .map(|m| 20.0 * m.log10())
}

/// Relative loudness of `v` against `x`: difference of peak levels in dB.
///
/// Only strictly positive components take part in each peak.
pub fn rel_loudness(x: &[f64], v: &[f64]) -> Result<f64> {
    let lx = peak_db(x)
        .ok_or_else(|| Error::UndefinedMetric("signal has no positive component".into()))?;
    let lv = peak_db(v)
        .ok_or_else(|| Error::UndefinedMetric("perturbation has no positive component".into()))?;
    Ok(lv - lx)
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximum absolute component.
pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
