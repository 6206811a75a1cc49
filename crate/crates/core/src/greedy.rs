//! Iterative greedy universal perturbation.
//!
//! Samples are visited in a seeded order each epoch. When the current
//! universal vector does not yet fool a sample, the inner attack finds a
//! minimal extra perturbation from `clip(x + v)`; it is added to `v` and the
//! sum is projected back onto the `p`-norm ball of radius `xi`. Crafting
//! stops once the training-set success rate reaches `1 - delta`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{add_clipped, asr_with_references, predictions, project_lp, AttackMode, Norm};
use crate::audio::AudioSample;
use crate::ddn::{Ddn, DdnConfig, InnerAttack};
use crate::error::{check_len, Error, Result};
use crate::model::Model;
use crate::perturbation::{CraftInfo, Perturbation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub p: Norm,
    pub xi: f64,
    pub delta: f64,
    pub mode: AttackMode,
    pub max_epochs: usize,
    pub inner: DdnConfig,
    pub seed: u64,
}

impl GreedyConfig {
    /// Infinity-norm ball of 0.2 (untargeted) or 0.12 (targeted).
    pub fn new(mode: AttackMode) -> Self {
        Self {
            p: Norm::Linf,
            xi: match mode {
                AttackMode::Untargeted => 0.2,
                AttackMode::Targeted(_) => 0.12,
            },
            delta: 0.1,
            mode,
            max_epochs: 100,
            inner: DdnConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(Error::invalid("projection radius must be positive"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1]"));
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub perturbation: Perturbation,
    /// Training-set success rate before the first epoch and after each epoch.
    pub asr_trace: Vec<f64>,
    pub converged: bool,
    pub epochs: usize,
    pub inner_calls: usize,
}

impl GreedyOutcome {
    pub fn train_asr(&self) -> f64 {
        *self
            .asr_trace
            .last()
            .expect("trace always holds the initial rate")
    }
}

/// Greedy universal perturbation with the DDN inner solver.
pub fn greedy_uap(model: &Model, xs: &[AudioSample], cfg: &GreedyConfig) -> Result<GreedyOutcome> {
    greedy_uap_with(model, xs, cfg, &Ddn::new(cfg.inner))
}

pub fn greedy_uap_with<A: InnerAttack + ?Sized>(
    model: &Model,
    xs: &[AudioSample],
    cfg: &GreedyConfig,
    inner: &A,
) -> Result<GreedyOutcome> {
    cfg.validate()?;
    cfg.mode.validate(model.classes())?;
    if xs.is_empty() {
        return Err(Error::invalid("greedy crafting needs at least one sample"));
    }
    let d = model.input_dim();
    for x in xs {
        check_len(d, x.len())?;
    }

    let refs = predictions(model, xs)?;
    let target = 1.0 - cfg.delta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v = vec![0.0; d];
    let mut rate = asr_with_references(model, xs, &refs, &v, cfg.mode)?;
    let mut asr_trace = vec![rate];
    let mut best = (rate, v.clone());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut inner_calls = 0;
    let mut epochs = 0;

    while rate < target && epochs < cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let start = add_clipped(xs[i].samples(), &v);
            if cfg.mode.is_success(model.predict(&start)?, refs[i]) {
                continue;
            }
            inner_calls += 1;
            let step = inner.minimal_perturbation(model, &start, cfg.mode, refs[i])?;
            for (a, b) in v.iter_mut().zip(&step.delta) {
                *a += b;
            }
            v = project_lp(&v, cfg.p, cfg.xi);
        }
        epochs += 1;
        rate = asr_with_references(model, xs, &refs, &v, cfg.mode)?;
        asr_trace.push(rate);
        if rate > best.0 {
            best = (rate, v.clone());
        }
    }

    let converged = rate >= target;
    let v = if converged { v } else { best.1 };
    let info = CraftInfo {
        p: Some(cfg.p),
        xi: Some(cfg.xi),
        seed: cfg.seed,
        converged,
        iterations: epochs,
        ..CraftInfo::default()
    };
    Ok(GreedyOutcome {
        perturbation: Perturbation::additive(v, cfg.mode, info),
        asr_trace,
        converged,
        epochs,
        inner_calls,
    })
}
