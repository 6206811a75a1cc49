//! Invariants of the public API over random inputs.

use proptest::prelude::*;
use uap_core::{
    perturbed_sample, project_lp, recover_vprime, rms_power, snr, spl, to_tanh_space, AttackMode,
    Norm, Perturbation, TanhVector,
};

fn unit_box(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #[test]
    fn perturbed_samples_stay_in_the_open_box(
        x in unit_box(16),
        v in prop::collection::vec(-40.0f64..40.0, 16),
    ) {
        let xt = to_tanh_space(&x, 1e-7).unwrap();
        let w = perturbed_sample(&xt, &TanhVector::new(v, 1e-7).unwrap()).unwrap();
        prop_assert!(w.iter().all(|w| *w > 0.0 && *w < 1.0));
    }

    #[test]
    fn moderate_perturbations_are_recovered(
        x in unit_box(16),
        v in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let xt = to_tanh_space(&x, 1e-7).unwrap();
        let vt = TanhVector::new(v.clone(), 1e-7).unwrap();
        let back = recover_vprime(&perturbed_sample(&xt, &vt).unwrap(), &xt).unwrap();
        for (a, b) in back.values().iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn snr_is_a_difference_of_levels(
        x in prop::collection::vec(-1.0f64..1.0, 32),
        v in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        prop_assume!(rms_power(&x).unwrap() > 1e-6 && rms_power(&v).unwrap() > 1e-6);
        let lhs = snr(&x, &v).unwrap();
        let rhs = spl(&x).unwrap() - spl(&v).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn projection_lands_inside_the_ball(
        v in prop::collection::vec(-5.0f64..5.0, 1..64),
        xi in 0.01f64..3.0,
        l2 in any::<bool>(),
    ) {
        let p = if l2 { Norm::L2 } else { Norm::Linf };
        let proj = project_lp(&v, p, xi);
        prop_assert!(p.of(&proj) <= xi + 1e-9);
        if p.of(&v) <= xi {
            prop_assert_eq!(proj, v);
        }
    }

    #[test]
    fn additive_perturbations_respect_the_box(
        x in unit_box(24),
        v in prop::collection::vec(-0.5f64..0.5, 24),
    ) {
        let pert = Perturbation::additive(v, AttackMode::Untargeted, Default::default());
        let adv = pert.apply(&x).unwrap();
        prop_assert!(adv.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
