//! Change of variables between the unit box and unconstrained tanh space.
//!
//! A signal `x` in `[0, 1]` maps to `x' = artanh((2x - 1)(1 - eps))`; a
//! perturbed example is `w = (tanh(x' + v') + 1) / 2`, which lies in the open
//! unit interval for every real `v'`. All arithmetic is `f64`.

use crate::error::{check_len, Error, Result};

/// Default guard keeping `artanh` arguments away from `±1`.
pub const DEFAULT_EPSILON: f64 = 1e-7;

// Largest f64 strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// A vector in tanh space together with the guard used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhVector {
    values: Vec<f64>,
    epsilon: f64,
}

impl TanhVector {
    pub fn new(values: Vec<f64>, epsilon: f64) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite tanh value at index {i}"
            )));
        }
        check_epsilon(epsilon)?;
        Ok(Self { values, epsilon })
    }

    pub fn zeros(len: usize, epsilon: f64) -> Self {
        Self {
            values: vec![0.0; len],
            epsilon,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon {epsilon} must lie in (0, 1)"
        )));
    }
    Ok(())
}

fn artanh(z: f64) -> f64 {
    0.5 * ((1.0 + z) / (1.0 - z)).ln()
}

/// Maps unit-box values into tanh space.
pub fn to_tanh_space(x: &[f64], epsilon: f64) -> Result<TanhVector> {
    check_epsilon(epsilon)?;
    let values = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "value {v} at index {i} lies outside [0, 1]"
                )));
            }
            Ok(artanh((2.0 * v - 1.0) * (1.0 - epsilon)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TanhVector { values, epsilon })
}

/// `(tanh(a) + 1) / 2` evaluated as a logistic, kept strictly inside (0, 1).
#[inline]
pub(crate) fn squash(a: f64) -> f64 {
    let w = 1.0 / (1.0 + (-2.0 * a).exp());
    w.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Perturbed example `w = (tanh(x' + v') + 1) / 2`.
pub fn perturbed_sample(x_tanh: &TanhVector, v_tanh: &TanhVector) -> Result<Vec<f64>> {
    check_len(x_tanh.len(), v_tanh.len())?;
    Ok(x_tanh
        .values
        .iter()
        .zip(&v_tanh.values)
        .map(|(a, b)| squash(a + b))
        .collect())
}

/// Derivative of [`perturbed_sample`] with respect to `v'`, elementwise.
pub fn perturbed_sample_derivative(w: &[f64]) -> Vec<f64> {
    w.iter().map(|w| 2.0 * w * (1.0 - w)).collect()
}

/// Solves `w = (tanh(x' + v') + 1) / 2` for `v'`.
pub fn recover_vprime(w: &[f64], x_tanh: &TanhVector) -> Result<TanhVector> {
    check_len(x_tanh.len(), w.len())?;
    let values = w
        .iter()
        .zip(&x_tanh.values)
        .enumerate()
        .map(|(i, (&wi, &xi))| {
            if !(wi > 0.0 && wi < 1.0) {
                return Err(Error::Singularity {
                    index: i,
                    value: wi,
                });
            }
            Ok(0.5 * (wi / (1.0 - wi)).ln() - xi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TanhVector {
        values,
        epsilon: x_tanh.epsilon,
    })
}

/// Signal-space rendering `v = (tanh(v') + 1 - eps) / (2 - 2 eps)`.
///
/// At saturation the closed form overshoots the box by `eps / (2 - 2 eps)`;
/// the result is clamped to `[0, 1]`, which leaves the inverse exact on the
/// box.
pub fn render_signal_v(v_tanh: &TanhVector) -> Vec<f64> {
    let eps = v_tanh.epsilon;
    v_tanh
        .values
        .iter()
        .map(|v| ((v.tanh() + 1.0 - eps) / (2.0 - 2.0 * eps)).clamp(0.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = DEFAULT_EPSILON;

    #[test]
    fn anchors() {
        assert_eq!(to_tanh_space(&[0.5], EPS).unwrap().values(), &[0.0]);
        // 0.5 * ln((2 - 1e-7) / 1e-7)
        let top = to_tanh_space(&[1.0], EPS).unwrap().values()[0];
        assert!((top - 0.5 * (2.0f64 / 1e-7 - 1.0).ln()).abs() < 1e-6);
        assert!((top - 8.4056).abs() < 1e-4);
        assert!(to_tanh_space(&[1.5], EPS).is_err());
        assert!(to_tanh_space(&[0.5], 0.0).is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let x = [0.0, 0.25, 0.5, 0.9, 1.0];
        let xt = to_tanh_space(&x, EPS).unwrap();
        let w = perturbed_sample(&xt, &TanhVector::zeros(5, EPS)).unwrap();
        for (a, b) in x.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6);
        }
        let mid = perturbed_sample(&TanhVector::zeros(1, EPS), &TanhVector::zeros(1, EPS));
        assert_eq!(mid.unwrap(), vec![0.5]);
    }

    #[test]
    fn recover_anchor_and_singularities() {
        let v = recover_vprime(&[0.5], &TanhVector::zeros(1, EPS)).unwrap();
        assert_eq!(v.values(), &[0.0]);
        assert!(matches!(
            recover_vprime(&[1.0], &TanhVector::zeros(1, EPS)),
            Err(Error::Singularity { index: 0, .. })
        ));
        assert!(recover_vprime(&[0.0], &TanhVector::zeros(1, EPS)).is_err());
    }

    #[test]
    fn render_anchors() {
        assert_eq!(render_signal_v(&TanhVector::zeros(3, EPS)), vec![0.5; 3]);
        let sat = render_signal_v(&TanhVector::new(vec![20.0, -20.0], EPS).unwrap());
        assert!((sat[0] - 1.0).abs() < 1e-8);
        assert!(sat[1].abs() < 1e-8);
    }

    #[test]
    fn to_tanh_inverse_over_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let xt = to_tanh_space(&x, EPS).unwrap();
            let back = render_signal_v(&xt);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn monotone_in_perturbation() {
        let xt = to_tanh_space(&[0.1, 0.5, 0.99], EPS).unwrap();
        let mut prev =
            perturbed_sample(&xt, &TanhVector::new(vec![-3.0; 3], EPS).unwrap()).unwrap();
        for k in -29..30 {
            let v = TanhVector::new(vec![k as f64 * 0.1; 3], EPS).unwrap();
            let w = perturbed_sample(&xt, &v).unwrap();
            for (a, b) in prev.iter().zip(&w) {
                assert!(b > a);
            }
            prev = w;
        }
    }

    proptest! {
        #[test]
        fn box_safety_under_extreme_inputs(
            x in prop::collection::vec(-1.0e3f64..1.0e3, 1..32),
            v in prop::collection::vec(-1.0e3f64..1.0e3, 32),
        ) {
            let xt = TanhVector::new(x.clone(), EPS).unwrap();
            let vt = TanhVector::new(v[..x.len()].to_vec(), EPS).unwrap();
            for w in perturbed_sample(&xt, &vt).unwrap() {
                prop_assert!(w > 0.0 && w < 1.0);
            }
        }

        #[test]
        fn recover_round_trips(
            x in prop::collection::vec(0.0f64..=1.0, 1..32),
            v in prop::collection::vec(-5.0f64..5.0, 32),
        ) {
            let xt = to_tanh_space(&x, EPS).unwrap();
            let vt = TanhVector::new(v[..x.len()].to_vec(), EPS).unwrap();
            let w = perturbed_sample(&xt, &vt).unwrap();
            let back = recover_vprime(&w, &xt).unwrap();
            let w2 = perturbed_sample(&xt, &back).unwrap();
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
