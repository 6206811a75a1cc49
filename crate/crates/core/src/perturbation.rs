//! Universal perturbations and their file format.
//!
//! A perturbation file is a JSON manifest plus a little-endian `f32` blob
//! (`<manifest stem>.bin`) holding `v_signal` followed, for the penalty
//! method, by `v_tanh`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::{add_clipped, AttackMode, Norm};
use crate::audio::{l2_norm, linf_norm, spl};
use crate::error::{check_len, Error, Result};
use crate::tanh::{render_signal_v, squash, to_tanh_space, TanhVector};

pub const PERTURBATION_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Penalty,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Greedy => "greedy",
            Method::Penalty => "penalty",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "penalty" => Ok(Method::Penalty),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub linf: f64,
}

/// Optional post-projection of the penalty method's signal rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub p: Norm,
    pub xi: f64,
}

/// Crafting settings recorded alongside a perturbation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CraftInfo {
    pub p: Option<Norm>,
    pub xi: Option<f64>,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub c: Option<f64>,
    pub kappa: Option<f64>,
    #[serde(rename = "S")]
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub epsilon: Option<f64>,
    pub projection: Option<Projection>,
}

/// A single input-agnostic perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub method: Method,
    pub mode: AttackMode,
    /// Additive vector (greedy) or the tanh-space rendering in `[0, 1]`
    /// (penalty, where 0.5 means "no change").
    pub v_signal: Vec<f64>,
    pub v_tanh: Option<TanhVector>,
    pub info: CraftInfo,
}

impl Perturbation {
    pub fn additive(v: Vec<f64>, mode: AttackMode, info: CraftInfo) -> Self {
        Self {
            method: Method::Greedy,
            mode,
            v_signal: v,
            v_tanh: None,
            info,
        }
    }

    pub fn from_tanh(v_tanh: TanhVector, mode: AttackMode, info: CraftInfo) -> Self {
        Self {
            method: Method::Penalty,
            mode,
            v_signal: render_signal_v(&v_tanh),
            v_tanh: Some(v_tanh),
            info,
        }
    }

    pub fn dim(&self) -> usize {
        self.v_signal.len()
    }

    /// Perturbed version of `x`: `clip(x + v)` for additive perturbations,
    /// `(tanh(x' + v') + 1) / 2` for tanh-space ones.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        match &self.v_tanh {
            None => Ok(add_clipped(x, &self.v_signal)),
            Some(vt) => {
                let xt = to_tanh_space(x, vt.epsilon())?;
                Ok(xt
                    .values()
                    .iter()
                    .zip(vt.values())
                    .map(|(a, b)| squash(a + b))
                    .collect())
            }
        }
    }

    /// The perturbation actually applied to `x`, i.e. `apply(x) - x`.
    pub fn applied(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(x)?.iter().zip(x).map(|(a, b)| a - b).collect())
    }

    /// Zero-centred signal-space component: `v` itself for additive
    /// perturbations, `v - 0.5` for tanh-space ones.
    pub fn centred(&self) -> Vec<f64> {
        match self.v_tanh {
            None => self.v_signal.clone(),
            Some(_) => self.v_signal.iter().map(|v| v - 0.5).collect(),
        }
    }

    pub fn norms(&self) -> Norms {
        let c = self.centred();
        Norms {
            l2: l2_norm(&c),
            linf: linf_norm(&c),
        }
    }

    pub fn spl(&self) -> f64 {
        spl(&self.centred()).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blob_path = path.with_extension("bin");
        let manifest = Manifest {
            format: PERTURBATION_FORMAT,
            method: self.method,
            mode: self.mode,
            d: self.dim(),
            norms: self.norms(),
            spl: self.spl(),
            has_tanh: self.v_tanh.is_some(),
            blob: blob_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            info: self.info.clone(),
        };
        let mut bytes = Vec::with_capacity(self.dim() * 8);
        let tanh = self.v_tanh.as_ref().map(|v| v.values()).unwrap_or(&[]);
        for v in self.v_signal.iter().chain(tanh) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(path, e))?;
        std::fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != PERTURBATION_FORMAT {
            return Err(Error::format(
                path,
                format!("unsupported perturbation format {}", m.format),
            ));
        }
        let blob_path = path.with_file_name(&m.blob);
        let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let expected = m.d * if m.has_tanh { 2 } else { 1 };
        if bytes.len() != expected * 4 {
            return Err(Error::format(
                &blob_path,
                format!("expected {expected} values, found {} bytes", bytes.len()),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let v_signal = values[..m.d].to_vec();
        let v_tanh = if m.has_tanh {
            let eps = m.info.epsilon.unwrap_or(crate::tanh::DEFAULT_EPSILON);
            Some(TanhVector::new(values[m.d..].to_vec(), eps)?)
        } else {
            None
        };
        Ok(Self {
            method: m.method,
            mode: m.mode,
            v_signal,
            v_tanh,
            info: m.info,
        })
    }

    /// Rounds stored vectors to `f32` so that a save/load round trip is exact.
    pub fn snap_to_f32(&mut self) {
        for v in &mut self.v_signal {
            *v = f64::from(*v as f32);
        }
        if let Some(vt) = &mut self.v_tanh {
            for v in vt.values_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    method: Method,
    #[serde(flatten)]
    mode: AttackMode,
    d: usize,
    norms: Norms,
    spl: f64,
    has_tanh: bool,
    blob: String,
    #[serde(flatten)]
    info: CraftInfo,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_apply_clips() {
        let p = Perturbation::additive(
            vec![0.3, -0.3],
            AttackMode::Untargeted,
            CraftInfo::default(),
        );
        assert_eq!(p.apply(&[0.9, 0.1]).unwrap(), vec![1.0, 0.0]);
        let applied = p.applied(&[0.9, 0.1]).unwrap();
        assert!((applied[0] - 0.1).abs() < 1e-12 && (applied[1] + 0.1).abs() < 1e-12);
        assert!(p.apply(&[0.5]).is_err());
    }

    #[test]
    fn zero_tanh_perturbation_renders_midpoint() {
        let p = Perturbation::from_tanh(
            TanhVector::zeros(4, 1e-7),
            AttackMode::Targeted(1),
            CraftInfo::default(),
        );
        assert_eq!(p.v_signal, vec![0.5; 4]);
        assert_eq!(p.norms().l2, 0.0);
        let x = [0.1, 0.4, 0.6, 0.95];
        for (a, b) in p.apply(&x).unwrap().iter().zip(&x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let info = CraftInfo {
            c: Some(0.2),
            kappa: Some(40.0),
            batch_size: Some(100),
            lr: Some(0.01),
            epsilon: Some(1e-7),
            seed: 3,
            ..CraftInfo::default()
        };
        let mut p = Perturbation::from_tanh(
            TanhVector::new(vec![0.1, -0.7, 2.0], 1e-7).unwrap(),
            AttackMode::Targeted(2),
            info,
        );
        p.snap_to_f32();
        let path = dir.path().join("p.uap");
        p.save(&path).unwrap();
        let back = Perturbation::load(&path).unwrap();
        assert_eq!(back, p);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in [
            "method",
            "mode",
            "p",
            "xi",
            "d",
            "norms",
            "spl",
            "seed",
            "c",
            "kappa",
            "S",
            "lr",
            "epsilon",
            "projection",
        ] {
            assert!(manifest.get(key).is_some(), "missing {key}");
        }
        assert_eq!(manifest["target"], 2);

        let greedy = Perturbation::additive(
            vec![0.25, -0.5],
            AttackMode::Untargeted,
            CraftInfo::default(),
        );
        let gpath = dir.path().join("g.uap");
        greedy.save(&gpath).unwrap();
        assert_eq!(Perturbation::load(&gpath).unwrap(), greedy);
        assert_eq!(
            std::fs::metadata(dir.path().join("g.bin")).unwrap().len(),
            8
        );
    }
}
