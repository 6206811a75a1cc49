//! Decoupled direction and norm (DDN) minimal-L2 attack.
//!
//! The perturbation direction follows normalised cross-entropy gradient
//! steps with a cosine-annealed step size, while its length is a separate
//! radius that shrinks by `1 - gamma` after an adversarial iterate and grows
//! by `1 + gamma` otherwise. Every iterate is clipped back into `[0, 1]^d`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::AttackMode;
use crate::audio::l2_norm;
use crate::error::{Error, Result};
use crate::model::{CrossEntropy, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdnConfig {
    pub steps: usize,
    pub init_norm: f64,
    /// Relative radius adjustment per step.
    pub gamma: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Seeds the random direction used when the gradient vanishes.
    pub seed: u64,
}

impl Default for DdnConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            init_norm: 0.2,
            gamma: 0.05,
            max_step: 1.0,
            min_step: 0.01,
            seed: 0,
        }
    }
}

impl DdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("DDN needs at least one step"));
        }
        if !(self.init_norm > 0.0) {
            return Err(Error::invalid("DDN initial norm must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("DDN gamma must lie in (0, 1)"));
        }
        Ok(())
    }

    fn step_size(&self, k: usize) -> f64 {
        let cos = (PI * k as f64 / self.steps as f64).cos();
        self.min_step + (self.max_step - self.min_step) * (1.0 + cos) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdnResult {
    /// Offset from the input; `x + delta` lies in `[0, 1]^d`.
    pub delta: Vec<f64>,
    pub success: bool,
    pub l2_norm: f64,
    /// Radius before the first step and after every step.
    pub radius_trace: Vec<f64>,
    /// Whether the iterate evaluated at each step was adversarial.
    pub adversarial_trace: Vec<bool>,
}

/// Per-sample minimal perturbation solver used inside the greedy method.
pub trait InnerAttack: Sync {
    /// Smallest perturbation of `x` found that satisfies `mode` relative to
    /// `reference`.
    fn minimal_perturbation(
        &self,
        model: &Model,
        x: &[f64],
        mode: AttackMode,
        reference: usize,
    ) -> Result<DdnResult>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ddn {
    pub config: DdnConfig,
}

impl Ddn {
    pub fn new(config: DdnConfig) -> Self {
        Self { config }
    }
}

impl InnerAttack for Ddn {
    fn minimal_perturbation(
        &self,
        model: &Model,
        x: &[f64],
        mode: AttackMode,
        reference: usize,
    ) -> Result<DdnResult> {
        ddn_minimal_perturbation(model, x, mode, reference, &self.config)
    }
}

/// Runs DDN from `x`. `reference` is the class an untargeted attack must
/// leave; targeted attacks aim at the mode's target.
pub fn ddn_minimal_perturbation(
    model: &Model,
    x: &[f64],
    mode: AttackMode,
    reference: usize,
    cfg: &DdnConfig,
) -> Result<DdnResult> {
    cfg.validate()?;
    mode.validate(model.classes())?;
    crate::error::check_len(model.input_dim(), x.len())?;
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("DDN input must lie in [0, 1]"));
    }

    let (ce_label, ascend) = match mode {
        AttackMode::Untargeted => (reference, true),
        AttackMode::Targeted(t) => (t, false),
    };
    let head = CrossEntropy(ce_label);
    // farthest box corner caps the radius
    let worst_norm = x.iter().map(|v| v.max(1.0 - v).powi(2)).sum::<f64>().sqrt();

    let mut rng: Option<ChaCha8Rng> = None;
    let mut delta = vec![0.0; x.len()];
    let mut norm = cfg.init_norm;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut radius_trace = Vec::with_capacity(cfg.steps + 1);
    let mut adversarial_trace = Vec::with_capacity(cfg.steps);
    radius_trace.push(norm);

    let mut adv: Vec<f64> = x.to_vec();
    for k in 0..cfg.steps {
        let l2 = l2_norm(&delta);
        let (_, grad, logits) = model.input_gradient_with_logits(&adv, &head)?;
        let is_adv = mode.is_success(crate::model::argmax(&logits), reference);
        adversarial_trace.push(is_adv);
        if is_adv && best.as_ref().is_none_or(|(b, _)| l2 < *b) {
            best = Some((l2, delta.clone()));
        }

        let gnorm = l2_norm(&grad);
        let sign = if ascend { 1.0 } else { -1.0 };
        let step = cfg.step_size(k);
        if gnorm > 0.0 && gnorm.is_finite() {
            for (d, g) in delta.iter_mut().zip(&grad) {
                *d += step * sign * g / gnorm;
            }
        } else {
            let rng = rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(cfg.seed));
            let dir: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
            let n = l2_norm(&dir);
            for (d, r) in delta.iter_mut().zip(&dir) {
                *d += step * r / n;
            }
        }

        norm *= if is_adv {
            1.0 - cfg.gamma
        } else {
            1.0 + cfg.gamma
        };
        norm = norm.min(worst_norm);
        radius_trace.push(norm);

        let dn = l2_norm(&delta);
        if dn > 0.0 {
            let s = norm / dn;
            delta.iter_mut().for_each(|d| *d *= s);
        }
        for ((d, a), xi) in delta.iter_mut().zip(adv.iter_mut()).zip(x) {
            *a = (xi + *d).clamp(0.0, 1.0);
            *d = *a - xi;
        }
    }

    // the last update has not been scored yet
    let l2 = l2_norm(&delta);
    if mode.is_success(model.predict(&adv)?, reference)
        && best.as_ref().is_none_or(|(b, _)| l2 < *b)
    {
        best = Some((l2, delta.clone()));
    }

    Ok(match best {
        Some((l2_norm, delta)) => DdnResult {
            delta,
            success: true,
            l2_norm,
            radius_trace,
            adversarial_trace,
        },
        None => DdnResult {
            l2_norm: l2,
            delta,
            success: false,
            radius_trace,
            adversarial_trace,
        },
    })
}
