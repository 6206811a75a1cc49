//! Attack modes, success criteria and attack success rate.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSample;
use crate::error::{check_len, Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "target")]
pub enum AttackMode {
    /// Any class other than the reference one.
    Untargeted,
    /// A specific class.
    Targeted(usize),
}

impl AttackMode {
    /// Whether prediction `pred` satisfies the attack, given the sample's
    /// reference class.
    #[inline]
    pub fn is_success(&self, pred: usize, reference: usize) -> bool {
        match *self {
            AttackMode::Untargeted => pred != reference,
            AttackMode::Targeted(t) => pred == t,
        }
    }

    pub fn target(&self) -> Option<usize> {
        match *self {
            AttackMode::Untargeted => None,
            AttackMode::Targeted(t) => Some(t),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::Untargeted => "untargeted",
            AttackMode::Targeted(_) => "targeted",
        }
    }

    pub(crate) fn validate(&self, classes: usize) -> Result<()> {
        if let AttackMode::Targeted(t) = *self {
            if t >= classes {
                return Err(Error::invalid(format!(
                    "target class {t} out of range for {classes} classes"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackMode::Untargeted => f.write_str("untargeted"),
            AttackMode::Targeted(t) => write!(f, "targeted({t})"),
        }
    }
}

/// Order of the norm ball used by the greedy method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Linf,
}

impl Norm {
    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => crate::audio::l2_norm(v),
            Norm::Linf => crate::audio::linf_norm(v),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "2",
            Norm::Linf => "inf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" => Ok(Norm::Linf),
            other => Err(Error::invalid(format!("unsupported norm order {other:?}"))),
        }
    }
}

/// Euclidean projection onto `{ v : ||v||_p <= xi }`.
pub fn project_lp(v: &[f64], p: Norm, xi: f64) -> Vec<f64> {
    match p {
        Norm::Linf => v.iter().map(|x| x.clamp(-xi, xi)).collect(),
        Norm::L2 => {
            let n = crate::audio::l2_norm(v);
            if n > xi {
                let s = xi / n;
                v.iter().map(|x| x * s).collect()
            } else {
                v.to_vec()
            }
        }
    }
}

/// `clip(x + v, 0, 1)`.
pub fn add_clipped(x: &[f64], v: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(v)
        .map(|(a, b)| (a + b).clamp(0.0, 1.0))
        .collect()
}

/// Predictions for every sample, in order.
pub fn predictions(model: &Model, xs: &[AudioSample]) -> Result<Vec<usize>> {
    xs.par_iter().map(|x| model.predict(x.samples())).collect()
}

/// Per-sample success flags for an arbitrary way of perturbing inputs.
pub fn success_flags<F>(
    model: &Model,
    xs: &[AudioSample],
    references: &[usize],
    mode: AttackMode,
    perturb: F,
) -> Result<Vec<bool>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    check_len(xs.len(), references.len())?;
    xs.par_iter()
        .zip(references.par_iter())
        .map(|(x, &r)| {
            let pred = model.predict(&perturb(x.samples())?)?;
            Ok(mode.is_success(pred, r))
        })
        .collect()
}

pub(crate) fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
}

/// Attack success rate of an additive perturbation: the fraction of samples
/// for which `clip(x + v)` satisfies `mode`, relative to the clean
/// predictions.
pub fn asr(model: &Model, xs: &[AudioSample], v: &[f64], mode: AttackMode) -> Result<f64> {
    let refs = predictions(model, xs)?;
    asr_with_references(model, xs, &refs, v, mode)
}

/// [`asr`] with precomputed reference classes.
pub fn asr_with_references(
    model: &Model,
    xs: &[AudioSample],
    references: &[usize],
    v: &[f64],
    mode: AttackMode,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("attack success rate of an empty set"));
    }
    check_len(model.input_dim(), v.len())?;
    let flags = success_flags(model, xs, references, mode, |x| Ok(add_clipped(x, v)))?;
    Ok(rate(&flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_lp(&[0.5, -0.3, 0.1], Norm::Linf, 0.2),
            vec![0.2, -0.2, 0.1]
        );
        let v = [6.0, 8.0];
        let p = project_lp(&v, Norm::L2, 6.0);
        assert!((p[0] - 3.6).abs() < 1e-12 && (p[1] - 4.8).abs() < 1e-12);
        assert_eq!(project_lp(&[0.1, 0.1], Norm::L2, 6.0), vec![0.1, 0.1]);
        assert_eq!(project_lp(&[0.1, -0.1], Norm::Linf, 0.2), vec![0.1, -0.1]);
    }

    #[test]
    fn mode_semantics() {
        assert!(AttackMode::Untargeted.is_success(1, 0));
        assert!(!AttackMode::Untargeted.is_success(0, 0));
        assert!(AttackMode::Targeted(2).is_success(2, 2));
        assert!(!AttackMode::Targeted(2).is_success(1, 0));
        assert!(AttackMode::Targeted(3).validate(3).is_err());
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Linf);
        assert!("1".parse::<Norm>().is_err());
    }

    fn linear_set() -> (Model, Vec<AudioSample>) {
        // w.x + b with w = (1, -1); class 0 iff x0 - x1 + b > 0
        let model = Model::linear_binary(&[1.0, -1.0], 0.0).unwrap();
        let xs = [[0.6, 0.5], [0.7, 0.5], [0.9, 0.5], [0.2, 0.5]]
            .iter()
            .map(|x| AudioSample::with_label(x.to_vec(), 0).unwrap())
            .collect();
        (model, xs)
    }

    #[test]
    fn zero_perturbation_never_fools_untargeted() {
        let (model, xs) = linear_set();
        assert_eq!(
            asr(&model, &xs, &[0.0, 0.0], AttackMode::Untargeted).unwrap(),
            0.0
        );
        // one of four samples is already class 1
        assert_eq!(
            asr(&model, &xs, &[0.0, 0.0], AttackMode::Targeted(1)).unwrap(),
            0.25
        );
        assert!(asr(&model, &[], &[0.0, 0.0], AttackMode::Untargeted).is_err());
    }

    #[test]
    fn perturbation_past_every_margin() {
        let (model, xs) = linear_set();
        // hyperplane oracle: sample i flips when v0 - v1 crosses -(x0 - x1)
        let margins: Vec<f64> = xs.iter().map(|x| x.samples()[0] - x.samples()[1]).collect();
        let refs = predictions(&model, &xs).unwrap();
        for shift in [-0.35, -0.25, -0.15, 0.05, 0.2] {
            let v = [shift / 2.0, -shift / 2.0];
            let expected = margins
                .iter()
                .zip(&refs)
                .filter(|(m, r)| {
                    let after = (*m + shift > 0.0) as usize;
                    (1 - after) != **r
                })
                .count() as f64
                / 4.0;
            let got = asr(&model, &xs, &v, AttackMode::Untargeted).unwrap();
            assert_eq!(got, expected, "shift {shift}");
        }
        assert_eq!(
            asr(&model, &xs[..3], &[-0.25, 0.25], AttackMode::Untargeted).unwrap(),
            1.0
        );
    }

    proptest! {
        #[test]
        fn projection_bounds_and_idempotence(
            v in prop::collection::vec(-10.0f64..10.0, 1..64),
            xi in 0.01f64..5.0,
        ) {
            for p in [Norm::L2, Norm::Linf] {
                let once = project_lp(&v, p, xi);
                prop_assert!(p.of(&once) <= xi + 1e-9);
                let twice = project_lp(&once, p, xi);
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
        }
    }
}
