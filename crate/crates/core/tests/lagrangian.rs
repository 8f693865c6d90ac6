mod common;

use common::kkt_run;
use lambda_core::autodiff::Graph;
use lambda_core::lagrangian::{penalty_psi, penalty_psi_value, proximal_objective, LagrangeState};
use lambda_core::rng::Rng;
use lambda_core::tensor::Tensor;
use proptest::prelude::*;

#[test]
fn alternating_updates_reach_the_kkt_point() {
    let mut rng = Rng::new(9);
    for _ in 0..10 {
        let (x0, l0) = (rng.uniform_range(-5.0, 5.0), rng.uniform_range(0.0, 5.0));
        let (x, lambda) = kkt_run(x0, l0);
        assert!((x - 1.0).abs() <= 1e-2, "x = {x} from ({x0}, {l0})");
        assert!((lambda - 2.0).abs() <= 0.2, "λ = {lambda} from ({x0}, {l0})");
    }
}

#[test]
fn inactive_constraint_drives_multiplier_to_zero() {
    // J_c = -3 ≤ d = 0 throughout: λ decays to zero and stays there.
    let mut s = LagrangeState::new(1, 4.0, 0.5, 0.1).unwrap();
    for _ in 0..20 {
        s = s.lambda_update(&[-3.0], &[0.0]).unwrap();
    }
    assert_eq!(s.lambda, vec![0.0]);
}

#[test]
fn infinite_threshold_has_no_multiplier() {
    let s = LagrangeState::new(1, 1.0, 1.0, 0.0).unwrap();
    assert_eq!(s.lambda_update(&[100.0], &[f64::INFINITY]).unwrap().lambda, vec![0.0]);
}

#[test]
fn invalid_penalty_settings_are_rejected() {
    assert!(LagrangeState::new(1, 0.0, 0.0, 0.0).is_err());
    assert!(LagrangeState::new(1, -1.0, 1.0, 0.0).is_err());
    assert!(penalty_psi_value(0.0, 0.0, -1.0, 1.0).is_err());
}

fn psi_grad(jc: f64, d: f64, lambda: f64, mu: f64) -> f64 {
    let mut g = Graph::new();
    let j = g.param(Tensor::scalar(jc));
    let p = penalty_psi(&mut g, j, d, lambda, mu).unwrap();
    g.backward(p).unwrap().wrt(j).item()
}

proptest! {
    #[test]
    fn psi_is_minus_the_proximal_minimum(jc in -5.0f64..5.0, d in -2.0f64..2.0, lambda in 0.0f64..5.0, mu in 0.01f64..10.0) {
        let s = LagrangeState { lambda: vec![lambda], mu, mu_growth: 1.0 };
        let next = s.lambda_update(&[jc], &[d]).unwrap().lambda[0];
        let g = jc - d;
        let at = proximal_objective(next, lambda, mu, g);
        let psi = penalty_psi_value(jc, d, lambda, mu).unwrap();
        prop_assert!((psi + at).abs() < 1e-9 * (1.0 + psi.abs()));
        for probe in [0.0, next * 0.5, next + 0.1, next + 1.0, lambda] {
            prop_assert!(proximal_objective(probe, lambda, mu, g) >= at - 1e-12);
        }
    }

    #[test]
    fn psi_is_continuous_and_non_decreasing(d in -2.0f64..2.0, lambda in 0.0f64..5.0, mu in 0.01f64..10.0, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f = |j: f64| penalty_psi_value(j, d, lambda, mu).unwrap();
        prop_assert!(f(lo) <= f(hi) + 1e-12);
        prop_assert!(f(lo) >= -lambda * lambda / (2.0 * mu) - 1e-12);
        let kink = d - lambda / mu;
        prop_assert!((f(kink + 1e-9) - f(kink - 1e-9)).abs() < 1e-6);
    }

    #[test]
    fn psi_slope_is_the_updated_multiplier(jc in -5.0f64..5.0, d in -2.0f64..2.0, lambda in 0.0f64..5.0, mu in 0.01f64..10.0) {
        let slope = psi_grad(jc, d, lambda, mu);
        prop_assert!((slope - (lambda + mu * (jc - d)).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn multipliers_stay_non_negative_and_penalty_grows(steps in prop::collection::vec(-3.0f64..3.0, 1..30), factor in 0.0f64..0.1) {
        let mut s = LagrangeState::new(1, 0.5, 0.2, factor).unwrap();
        for j in steps {
            let next = s.lambda_update(&[j], &[0.0]).unwrap();
            prop_assert!(next.lambda[0] >= 0.0);
            prop_assert!(next.mu >= s.mu);
            s = next;
        }
    }
}
