//! 16-bit PCM mono WAV reading and writing.
//!
//! An integer amplitude `s` maps to `(s / 32768 + 1) / 2`, so the full PCM
//! range lands in `[0, 1)`. Writing inverts the mapping with rounding and
//! saturates at `i16::MAX`.

use std::path::Path;

use crate::audio::AudioSample;
use crate::error::{Error, Result};

/// Converts a PCM code to the unit interval.
pub fn pcm_to_unit(s: i16) -> f64 {
    (f64::from(s) / 32768.0 + 1.0) / 2.0
}

/// Converts a unit-interval amplitude back to a PCM code.
pub fn unit_to_pcm(x: f64) -> i16 {
    let s = ((2.0 * x - 1.0) * 32768.0).round();
    s.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::format(path, other.to_string()),
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSample> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit integer PCM, found {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(pcm_to_unit))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    if samples.is_empty() {
        return Err(Error::format(path, "no audio frames"));
    }
    AudioSample::new(samples, spec.sample_rate, None)
}

pub fn save_wav(sample: &AudioSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &x in sample.samples() {
        writer
            .write_sample(unit_to_pcm(x))
            .map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
