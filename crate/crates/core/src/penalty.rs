//! Penalty-method universal perturbation.
//!
//! The perturbation lives in tanh space as `v'`. For every training sample
//! the perturbed example is `w_i = (tanh(x'_i + v') + 1) / 2`, which stays in
//! the open unit box for any `v'`. Each Adam step minimises
//! `SPL(v') + c * G(w_i)` summed over a mini-batch, where `G` is a hinge on
//! the logits floored at `-kappa`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{project_lp, rate, AttackMode};
use crate::audio::{spl, spl_gradient, AudioSample};
use crate::error::{check_len, Error, Result};
use crate::model::{Model, ScalarHead};
use crate::optim::{AdamConfig, AdamState};
use crate::perturbation::{CraftInfo, Perturbation, Projection};
use crate::tanh::{
    recover_vprime, render_signal_v, squash, to_tanh_space, TanhVector, DEFAULT_EPSILON,
};

/// Largest logit other than `class`, with the lowest index winning ties.
fn runner_up(logits: &[f64], class: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, &f) in logits.iter().enumerate() {
        if j != class && (best.0 == usize::MAX || f > best.1) {
            best = (j, f);
        }
    }
    best
}

fn check_class(logits: &[f64], class: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid("hinge needs at least two logits"));
    }
    if class >= logits.len() {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(())
}

/// `max(max_{j != t} f_j - f_t, -kappa)`.
pub fn hinge_targeted(logits: &[f64], target: usize, kappa: f64) -> Result<f64> {
    check_class(logits, target)?;
    Ok((runner_up(logits, target).1 - logits[target]).max(-kappa))
}

/// `max(f_y - max_{j != y} f_j, -kappa)`.
pub fn hinge_untargeted(logits: &[f64], label: usize, kappa: f64) -> Result<f64> {
    check_class(logits, label)?;
    Ok((logits[label] - runner_up(logits, label).1).max(-kappa))
}

/// Hinge penalty as a differentiable head. The subgradient is taken at the
/// lowest-index runner-up and is zero on the `-kappa` floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hinge {
    pub targeted: bool,
    /// Target class, or the legitimate class for untargeted attacks.
    pub class: usize,
    pub kappa: f64,
}

impl Hinge {
    pub fn new(mode: AttackMode, label: usize, kappa: f64) -> Self {
        match mode {
            AttackMode::Targeted(t) => Self {
                targeted: true,
                class: t,
                kappa,
            },
            AttackMode::Untargeted => Self {
                targeted: false,
                class: label,
                kappa,
            },
        }
    }
}

impl ScalarHead for Hinge {
    fn evaluate(&self, logits: &[f64]) -> (f64, Vec<f64>) {
        let (j, other) = runner_up(logits, self.class);
        let raw = if self.targeted {
            other - logits[self.class]
        } else {
            logits[self.class] - other
        };
        let mut grad = vec![0.0; logits.len()];
        if raw > -self.kappa {
            let s = if self.targeted { 1.0 } else { -1.0 };
            grad[j] = s;
            grad[self.class] = -s;
        }
        (raw.max(-self.kappa), grad)
    }
}

/// One sample's penalty loss and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyLoss {
    pub loss: f64,
    pub spl: f64,
    pub hinge: f64,
    pub grad: Vec<f64>,
}

/// `SPL(v') + c * G(w)` with `v'` recovered from `w`; the gradient is taken
/// with respect to `w`.
pub fn penalty_loss(
    model: &Model,
    w: &[f64],
    x_tanh: &TanhVector,
    hinge: &Hinge,
    c: f64,
) -> Result<PenaltyLoss> {
    check_len(x_tanh.len(), w.len())?;
    let v = recover_vprime(w, x_tanh)?;
    let (g, g_grad, _) = model.input_gradient_with_logits(w, hinge)?;
    let s = spl(v.values())?;
    // dv'/dw = 1 / (2 w (1 - w))
    let grad = spl_gradient(v.values())?
        .iter()
        .zip(&g_grad)
        .zip(w)
        .map(|((a, b), w)| a / (2.0 * w * (1.0 - w)) + c * b)
        .collect();
    Ok(PenaltyLoss {
        loss: s + c * g,
        spl: s,
        hinge: g,
        grad,
    })
}

/// The same loss at a known `v'`, with the gradient taken with respect to
/// `v'`. Avoids the recovery round trip, which is ill-conditioned near
/// `v' = 0`.
pub fn penalty_loss_at(
    model: &Model,
    x_tanh: &TanhVector,
    v_tanh: &TanhVector,
    hinge: &Hinge,
    c: f64,
) -> Result<PenaltyLoss> {
    check_len(x_tanh.len(), v_tanh.len())?;
    let s = spl(v_tanh.values())?;
    let s_grad = spl_gradient(v_tanh.values())?;
    sample_term(model, x_tanh, v_tanh, hinge, c, s, &s_grad).map(|(l, _)| l)
}

fn sample_term(
    model: &Model,
    x_tanh: &TanhVector,
    v_tanh: &TanhVector,
    hinge: &Hinge,
    c: f64,
    s: f64,
    s_grad: &[f64],
) -> Result<(PenaltyLoss, f64)> {
    let w: Vec<f64> = x_tanh
        .values()
        .iter()
        .zip(v_tanh.values())
        .map(|(a, b)| squash(a + b))
        .collect();
    let (g, g_grad, _) = model.input_gradient_with_logits(&w, hinge)?;
    let grad = s_grad
        .iter()
        .zip(&g_grad)
        .zip(&w)
        .map(|((a, b), w)| a + c * b * 2.0 * w * (1.0 - w))
        .collect();
    let recovered = recover_vprime(&w, x_tanh)?;
    let drift = recovered
        .values()
        .iter()
        .zip(v_tanh.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((
        PenaltyLoss {
            loss: s + c * g,
            spl: s,
            hinge: g,
            grad,
        },
        drift,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub c: f64,
    pub kappa: f64,
    pub delta: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub mode: AttackMode,
    /// Norm ball applied to the zero-centred signal rendering after each step.
    pub projection: Option<Projection>,
    pub adam: AdamConfig,
    pub epsilon: f64,
    pub seed: u64,
}

impl PenaltyConfig {
    /// `c = 0.2, kappa = 40` untargeted; `c = 0.15, kappa = 10` targeted.
    pub fn new(mode: AttackMode) -> Self {
        let (c, kappa) = match mode {
            AttackMode::Untargeted => (0.2, 40.0),
            AttackMode::Targeted(_) => (0.15, 10.0),
        };
        Self {
            c,
            kappa,
            delta: 0.1,
            batch_size: 100,
            max_iterations: 100,
            mode,
            projection: None,
            adam: AdamConfig::default(),
            epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::invalid("penalty coefficient c must be positive"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid("confidence kappa must be non-negative"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if let Some(p) = self.projection {
            if !(p.xi > 0.0) {
                return Err(Error::invalid("projection radius must be positive"));
            }
        }
        Ok(())
    }

    fn info(&self, converged: bool, iterations: usize) -> CraftInfo {
        CraftInfo {
            p: self.projection.map(|p| p.p),
            xi: self.projection.map(|p| p.xi),
            seed: self.seed,
            converged,
            iterations,
            c: Some(self.c),
            kappa: Some(self.kappa),
            batch_size: Some(self.batch_size),
            lr: Some(self.adam.lr),
            epsilon: Some(self.epsilon),
            projection: self.projection,
        }
    }
}

/// Diagnostics for one Adam step, measured on the batch before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyIterate {
    pub iteration: usize,
    pub batch: usize,
    /// Training-set success rate of the iterate the batch was evaluated at.
    pub asr: f64,
    pub spl_vprime: f64,
    /// SPL of the zero-centred signal rendering `v - 0.5`.
    pub spl_signal: f64,
    pub mean_loss: f64,
    pub min_loss: f64,
    pub mean_hinge: f64,
    /// Largest gap between `v'` and the value recovered from any `w_i`.
    pub max_recover_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutcome {
    pub perturbation: Perturbation,
    pub trace: Vec<PenaltyIterate>,
    /// Training-set success rate of every iterate, starting at `v' = 0`.
    pub asr_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl PenaltyOutcome {
    pub fn train_asr(&self) -> f64 {
        *self
            .asr_trace
            .last()
            .expect("trace always holds the initial rate")
    }
}

/// Reference class of each sample: the label for untargeted attacks.
fn references(xs: &[AudioSample], mode: AttackMode) -> Result<Vec<usize>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| match (mode, x.label) {
            (AttackMode::Targeted(t), _) => Ok(t),
            (AttackMode::Untargeted, Some(l)) => Ok(l),
            (AttackMode::Untargeted, None) => {
                Err(Error::invalid(format!("sample {i} has no label")))
            }
        })
        .collect()
}

fn tanh_asr(
    model: &Model,
    xts: &[TanhVector],
    refs: &[usize],
    v: &TanhVector,
    mode: AttackMode,
) -> Result<f64> {
    let flags = xts
        .par_iter()
        .zip(refs.par_iter())
        .map(|(xt, &r)| {
            let w: Vec<f64> = xt
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| squash(a + b))
                .collect();
            Ok(mode.is_success(model.predict(&w)?, r))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(rate(&flags))
}

/// Projects the centred rendering of `v'` and maps changed entries back.
fn project_tanh(v: &mut TanhVector, projection: Projection) {
    let eps = v.epsilon();
    let centred: Vec<f64> = render_signal_v(v).iter().map(|s| s - 0.5).collect();
    let projected = project_lp(&centred, projection.p, projection.xi);
    for ((vt, a), b) in v.values_mut().iter_mut().zip(&centred).zip(&projected) {
        if a != b {
            let z = 2.0 * b * (1.0 - eps);
            *vt = 0.5 * ((1.0 + z) / (1.0 - z)).ln();
        }
    }
}

/// Crafts a universal perturbation with the penalty method. Untargeted
/// attacks need labelled samples.
pub fn penalty_uap(
    model: &Model,
    xs: &[AudioSample],
    cfg: &PenaltyConfig,
) -> Result<PenaltyOutcome> {
    cfg.validate()?;
    cfg.mode.validate(model.classes())?;
    if xs.is_empty() {
        return Err(Error::invalid("penalty crafting needs at least one sample"));
    }
    let d = model.input_dim();
    let refs = references(xs, cfg.mode)?;
    if let Some(&bad) = refs.iter().find(|r| **r >= model.classes()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let xts = xs
        .iter()
        .map(|x| {
            check_len(d, x.len())?;
            to_tanh_space(x.samples(), cfg.epsilon)
        })
        .collect::<Result<Vec<_>>>()?;

    let target = 1.0 - cfg.delta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut v = TanhVector::zeros(d, cfg.epsilon);
    let mut adam = AdamState::new(d, cfg.adam);
    let mut rate = tanh_asr(model, &xts, &refs, &v, cfg.mode)?;
    let mut asr_trace = vec![rate];
    let mut best = (rate, v.clone());
    let mut trace = Vec::new();
    let mut iterations = 0;

    while rate < target && iterations < cfg.max_iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let s = spl(v.values())?;
        let s_grad = spl_gradient(v.values())?;
        let terms = batch
            .par_iter()
            .map(|&i| {
                sample_term(
                    model,
                    &xts[i],
                    &v,
                    &Hinge::new(cfg.mode, refs[i], cfg.kappa),
                    cfg.c,
                    s,
                    &s_grad,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut g = vec![0.0; d];
        let (mut loss_sum, mut hinge_sum, mut min_loss, mut drift) =
            (0.0, 0.0, f64::INFINITY, 0.0f64);
        for (term, dr) in &terms {
            for (a, b) in g.iter_mut().zip(&term.grad) {
                *a += b;
            }
            loss_sum += term.loss;
            hinge_sum += term.hinge;
            min_loss = min_loss.min(term.loss);
            drift = drift.max(*dr);
        }
        let centred: Vec<f64> = render_signal_v(&v).iter().map(|s| s - 0.5).collect();
        trace.push(PenaltyIterate {
            iteration: iterations,
            batch: batch.len(),
            asr: rate,
            spl_vprime: s,
            spl_signal: spl(&centred)?,
            mean_loss: loss_sum / batch.len() as f64,
            min_loss,
            mean_hinge: hinge_sum / batch.len() as f64,
            max_recover_error: drift,
        });

        adam.step(v.values_mut(), &g);
        if let Some(p) = cfg.projection {
            project_tanh(&mut v, p);
        }
        iterations += 1;
        rate = tanh_asr(model, &xts, &refs, &v, cfg.mode)?;
        asr_trace.push(rate);
        if rate > best.0 {
            best = (rate, v.clone());
        }
    }

    let converged = rate >= target;
    let v = if converged { v } else { best.1 };
    Ok(PenaltyOutcome {
        perturbation: Perturbation::from_tanh(v, cfg.mode, cfg.info(converged, iterations)),
        trace,
        asr_trace,
        converged,
        iterations,
    })
}
