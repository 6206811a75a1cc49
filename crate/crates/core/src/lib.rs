//! Universal adversarial perturbations for raw-waveform audio classifiers.
//!
//! Two crafting methods are provided: an iterative greedy method that
//! aggregates per-sample minimal perturbations ([`greedy`]) and a penalty
//! method that minimises loudness plus a hinge penalty in tanh space
//! ([`penalty`]). Both target the small differentiable victims in [`model`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod audio;
pub mod ddn;
pub mod error;
pub mod eval;
pub mod greedy;
pub mod model;
pub mod optim;
pub mod penalty;
pub mod perturbation;
pub mod stats;
pub mod tanh;
pub mod wav;

pub use attack::{asr, project_lp, AttackMode, Norm};
pub use audio::{rel_loudness, rms_power, snr, spl, AudioSample, SignalVector};
pub use ddn::{ddn_minimal_perturbation, Ddn, DdnConfig, DdnResult, InnerAttack};
pub use error::{Error, Result};
pub use eval::{evaluate_uap, EvalReport, EvalRow, TransferMatrix};
pub use greedy::{greedy_uap, GreedyConfig, GreedyOutcome};
pub use model::{Architecture, LogitVector, Model};
pub use optim::{AdamConfig, AdamState};
pub use penalty::{
    hinge_targeted, hinge_untargeted, penalty_loss, penalty_uap, PenaltyConfig, PenaltyOutcome,
};
pub use perturbation::{Method, Perturbation, Projection};
pub use stats::{two_proportion_z, ZTest};
pub use tanh::{perturbed_sample, recover_vprime, render_signal_v, to_tanh_space, TanhVector};
pub use wav::{load_wav, save_wav};
