use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use super::Model;
use crate::audio::DEFAULT_SAMPLE_RATE;
use crate::error::{Error, Result};

const CONV1_FILTERS: usize = 8;
const CONV1_KERNEL: usize = 32;
const CONV1_STRIDE: usize = 4;
const CONV2_FILTERS: usize = 16;
const CONV2_KERNEL: usize = 8;
const CONV2_STRIDE: usize = 2;
const POOL: usize = 4;

/// The fixed set of victim architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Two randomly initialised conv blocks and a dense head.
    RandCnn,
    /// Same as `RandCnn` but the first layer is a frozen gammatone bank.
    GammaCnn,
    /// A single dense layer.
    Linear,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::RandCnn,
        Architecture::GammaCnn,
        Architecture::Linear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::RandCnn => "rand-cnn",
            Architecture::GammaCnn => "gamma-cnn",
            Architecture::Linear => "linear",
        }
    }

    pub fn build(&self, input_dim: usize, classes: usize, seed: u64) -> Result<Model> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = self.layer_specs(input_dim, classes)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let mut layer = Layer::new(spec);
            let fan_in = match spec {
                LayerSpec::Conv1d {
                    in_channels,
                    kernel,
                    ..
                } => in_channels * kernel,
                LayerSpec::Dense { inputs, .. } => inputs,
                _ => 0,
            };
            if fan_in > 0 {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                for w in &mut layer.weight {
                    *w = normal.sample(&mut rng);
                }
            }
            if i == 0 && *self == Architecture::GammaCnn {
                layer.weight = gammatone_bank(CONV1_FILTERS, CONV1_KERNEL, DEFAULT_SAMPLE_RATE);
                layer.frozen = true;
            }
            layers.push(layer);
        }
        Ok(Model::from_layers(input_dim, layers)?.with_meta(*self, seed))
    }

    fn layer_specs(&self, d: usize, classes: usize) -> Result<Vec<LayerSpec>> {
        if *self == Architecture::Linear {
            return Ok(vec![LayerSpec::Dense {
                inputs: d,
                outputs: classes,
            }]);
        }
        let mut specs = vec![
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: CONV1_FILTERS,
                kernel: CONV1_KERNEL,
                stride: CONV1_STRIDE,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: POOL },
            LayerSpec::Conv1d {
                in_channels: CONV1_FILTERS,
                out_channels: CONV2_FILTERS,
                kernel: CONV2_KERNEL,
                stride: CONV2_STRIDE,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: POOL },
        ];
        let mut shape = (1, d);
        for s in &specs {
            shape = s.output_shape(shape).ok_or_else(|| {
                Error::invalid(format!(
                    "input dimension {d} is too short for {}",
                    self.name()
                ))
            })?;
        }
        specs.push(LayerSpec::Dense {
            inputs: shape.0 * shape.1,
            outputs: classes,
        });
        Ok(specs)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown architecture {s:?}")))
    }
}

/// Fourth-order gammatone impulse responses with centre frequencies spaced
/// evenly on the ERB scale, each normalised to unit energy.
fn gammatone_bank(filters: usize, kernel: usize, sample_rate: u32) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let erb_rate = |f: f64| 21.4 * (1.0 + 0.00437 * f).log10();
    let inv_erb_rate = |e: f64| (10f64.powf(e / 21.4) - 1.0) / 0.00437;
    let (lo, hi) = (erb_rate(100.0), erb_rate(0.45 * fs));
    let mut weights = Vec::with_capacity(filters * kernel);
    for k in 0..filters {
        let fc = inv_erb_rate(lo + (hi - lo) * k as f64 / (filters - 1).max(1) as f64);
        let bw = 1.019 * (24.7 + 0.108 * fc);
        let taps: Vec<f64> = (0..kernel)
            .map(|n| {
                let t = n as f64 / fs;
                t.powi(3) * (-2.0 * PI * bw * t).exp() * (2.0 * PI * fc * t).cos()
            })
            .collect();
        let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
        weights.extend(taps.iter().map(|v| v / norm));
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_each_architecture() {
        for arch in Architecture::ALL {
            let m = arch.build(4096, 3, 1).unwrap();
            assert_eq!(m.classes(), 3);
            assert_eq!(m.forward_logits(&vec![0.5; 4096]).unwrap().len(), 3);
            assert_eq!(arch.name().parse::<Architecture>().unwrap(), arch);
        }
        assert!(Architecture::RandCnn.build(100, 3, 0).is_err());
        assert!(Architecture::Linear.build(100, 1, 0).is_err());
    }

    #[test]
    fn gamma_first_layer_is_frozen_unit_energy() {
        let m = Architecture::GammaCnn.build(512, 3, 4).unwrap();
        let first = &m.layers()[0];
        assert!(first.frozen);
        for row in first.weight.chunks(CONV1_KERNEL) {
            let e: f64 = row.iter().map(|v| v * v).sum();
            assert!((e - 1.0).abs() < 1e-12);
        }
        // seed-independent filter bank
        let other = Architecture::GammaCnn.build(512, 3, 5).unwrap();
        assert_eq!(first.weight, other.layers()[0].weight);
    }

    #[test]
    fn same_seed_same_model() {
        let a = Architecture::RandCnn.build(512, 3, 11).unwrap();
        let b = Architecture::RandCnn.build(512, 3, 11).unwrap();
        let c = Architecture::RandCnn.build(512, 3, 12).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
