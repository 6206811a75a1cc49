//! Synthetic band-limited tone datasets and their on-disk form.
//!
//! Class `k` is an amplitude-modulated sinusoid whose carrier lies in the
//! `k`-th of `C` equal-width frequency bands below Nyquist. Carrier and
//! modulation frequencies sit on integer DFT bins, so a noiseless waveform
//! is exactly periodic over its length.
//!
//! By default every sample of a class shares one carrier (the band centre,
//! zero phase) and only the envelope, gain and noise vary. The class tone is
//! then a common waveform, which is what lets a single additive vector act
//! on every sample the same way. `random_carrier` draws the carrier bin and
//! phase per sample instead.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioSample, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::wav::{load_wav, save_wav};

const MAX_MOD_BIN: usize = 4;
const BAND_FILL: (f64, f64) = (0.15, 0.85);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub sample: AudioSample,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub classes: usize,
    pub dim: usize,
    pub items: Vec<LabeledSample>,
}

impl SyntheticDataset {
    pub fn split(&self, split: Split) -> Vec<LabeledSample> {
        self.items
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect()
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    /// Peak amplitude of the additive uniform noise, relative to the tone.
    pub noise: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Draw the carrier bin and phase per sample rather than per class.
    #[serde(default)]
    pub random_carrier: bool,
}

impl DatasetSpec {
    /// Two thirds of each class go to training, the rest to test.
    pub fn new(classes: usize, per_class: usize, dim: usize, noise: f64, seed: u64) -> Self {
        let train = (per_class * 2).div_ceil(3);
        Self {
            classes,
            train_per_class: train,
            val_per_class: 0,
            test_per_class: per_class - train,
            dim,
            noise,
            seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            random_carrier: false,
        }
    }

    pub fn per_class(&self) -> usize {
        self.train_per_class + self.val_per_class + self.test_per_class
    }

    /// Inclusive DFT bin range holding class `k`'s carrier and sidebands.
    pub fn band_bins(&self, k: usize) -> (usize, usize) {
        let nyquist = (self.dim / 2) as f64;
        let width = nyquist / self.classes as f64;
        let lo = (width * (k as f64 + BAND_FILL.0)).floor() as usize;
        let hi = (width * (k as f64 + BAND_FILL.1)).floor() as usize;
        (lo, hi)
    }
}

pub fn generate_synthetic_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    if spec.classes < 2 {
        return Err(Error::invalid("a dataset needs at least two classes"));
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::invalid("noise level must be a non-negative number"));
    }
    let (lo, hi) = spec.band_bins(0);
    if hi < lo + 2 * MAX_MOD_BIN + 1 || lo < MAX_MOD_BIN + 1 {
        return Err(Error::invalid(format!(
            "dimension {} is too small for {} frequency bands",
            spec.dim, spec.classes
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let mut items = Vec::with_capacity(spec.classes * spec.per_class());
    for class in 0..spec.classes {
        let (lo, hi) = spec.band_bins(class);
        for idx in 0..spec.per_class() {
            let mod_bin = rng.random_range(1..=MAX_MOD_BIN) as f64;
            let carrier = rng.random_range(lo + MAX_MOD_BIN..=hi - MAX_MOD_BIN) as f64;
            let depth = rng.random_range(0.3..0.7);
            let (phase_m, phase_c) = (
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            );
            let (carrier, phase_c) = if spec.random_carrier {
                (carrier, phase_c)
            } else {
                (((lo + hi) / 2) as f64, 0.0)
            };
            let gain = rng.random_range(0.6..1.0);
            let raw: Vec<f64> = (0..d)
                .map(|n| {
                    let t = n as f64 / d as f64;
                    let envelope = 1.0 + depth * (2.0 * PI * mod_bin * t + phase_m).cos();
                    let tone = envelope * (2.0 * PI * carrier * t + phase_c).sin();
                    let noise = if spec.noise > 0.0 {
                        spec.noise * rng.random_range(-1.0..=1.0)
                    } else {
                        0.0
                    };
                    tone + noise
                })
                .collect();
            let peak = raw
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(f64::MIN_POSITIVE);
            let samples = raw
                .iter()
                .map(|v| (0.5 + 0.5 * gain * v / peak).clamp(0.0, 1.0))
                .collect();
            let split = if idx < spec.train_per_class {
                Split::Train
            } else if idx < spec.train_per_class + spec.val_per_class {
                Split::Val
            } else {
                Split::Test
            };
            items.push(LabeledSample {
                id: format!("c{class}_{idx:05}"),
                sample: AudioSample::new(samples, spec.sample_rate, Some(class))?,
                label: class,
                split,
            });
        }
    }
    Ok(SyntheticDataset {
        classes: spec.classes,
        dim: d,
        items,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    filename: String,
    label: usize,
    split: Split,
}

pub const LABELS_FILE: &str = "labels.csv";

/// Writes one WAV per sample plus `labels.csv` (`filename,label,split`).
pub fn export_dataset(data: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels_path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&labels_path)?;
    for item in &data.items {
        let filename = format!("{}.wav", item.id);
        save_wav(&item.sample, dir.join(&filename))?;
        w.serialize(LabelRow {
            filename,
            label: item.label,
            split: item.split,
        })?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Reads a directory written by [`export_dataset`].
pub fn import_dataset(dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    let dir = dir.as_ref();
    let mut reader = csv::Reader::from_path(dir.join(LABELS_FILE))?;
    let mut items = Vec::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        let mut sample = load_wav(dir.join(&row.filename))?;
        sample.label = Some(row.label);
        let id = row
            .filename
            .strip_suffix(".wav")
            .unwrap_or(&row.filename)
            .to_string();
        items.push(LabeledSample {
            id,
            sample,
            label: row.label,
            split: row.split,
        });
    }
    let first = items
        .first()
        .ok_or_else(|| Error::format(dir.join(LABELS_FILE), "dataset has no samples"))?;
    let dim = first.sample.len();
    if let Some(bad) = items.iter().find(|s| s.sample.len() != dim) {
        return Err(Error::format(
            dir.join(&bad.id),
            format!("expected {dim} frames, found {}", bad.sample.len()),
        ));
    }
    let classes = items.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    Ok(SyntheticDataset {
        classes,
        dim,
        items,
    })
}
