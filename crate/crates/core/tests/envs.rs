use lambda_core::agent::evaluate_with;
use lambda_core::cmdp::TrainingCosts;
use lambda_core::envs::{ActionRepeat, Environment, GridLayout, GridNavigation, PointHazard2D, PointHazardConfig};
use lambda_core::lp::{exact_policy_eval, TabularPolicy};
use lambda_core::policy::SquashedGaussianPolicy;
use lambda_core::rng::Rng;

/// Upper 99.9% point of χ²(df), Wilson-Hilferty approximation.
fn chi2_critical(df: f64) -> f64 {
    let k = 2.0 / (9.0 * df);
    df * (1.0 - k + 3.09 * k.sqrt()).powi(3)
}

#[test]
fn sampled_grid_transitions_match_the_kernel() {
    let mut env = GridNavigation::new("grid8", GridLayout::default()).unwrap();
    let mut rng = Rng::new(31);
    let w = env.layout().width();
    for (s, action) in [(4, [0.3, -0.2]), (w + 3, [-0.9, 0.1]), (2 * w + 5, [0.0, 0.0])] {
        let probs = env.move_probabilities(&action);
        let cmdp = env.cmdp().clone();
        let expected: Vec<f64> =
            (0..cmdp.n_states).map(|next| (0..4).map(|k| probs[k] * cmdp.p(s, k, next)).sum()).collect();
        let n = 20_000;
        let mut counts = vec![0usize; cmdp.n_states];
        for _ in 0..n {
            env.set_state(s);
            env.step(&action, &mut rng);
            counts[env.state()] += 1;
        }
        let mut chi2 = 0.0;
        let mut cells = 0;
        for (c, p) in counts.iter().zip(&expected) {
            if *p > 0.0 {
                let e = p * n as f64;
                chi2 += (*c as f64 - e).powi(2) / e;
                cells += 1;
            } else {
                assert_eq!(*c, 0, "reached an impossible successor of {s}");
            }
        }
        let df = (cells - 1).max(1) as f64;
        assert!(chi2 < chi2_critical(df), "state {s}: χ² {chi2} on {df} dof");
    }
}

#[test]
fn untrained_policy_scores_the_uniform_policy_value() {
    // A zero-output policy acts with tanh(0) = 0, which picks each grid move
    // with probability 1/4: the uniform tabular policy.
    let mut env = GridNavigation::new("grid8", GridLayout::default()).unwrap();
    let exact = {
        let c = env.cmdp();
        exact_policy_eval(c, &TabularPolicy::uniform(c.horizon, c.n_states, c.n_actions)).unwrap()
    };
    let policy = SquashedGaussianPolicy::new(2, 2, &[16, 16], 1e-4, &mut Rng::new(0));
    let horizon = env.horizon();
    let n = 2000;
    let returns: Vec<f64> = (0..n)
        .map(|seed| evaluate_with(&policy, &mut env, 1, horizon, true, &TrainingCosts::default(), seed).unwrap().j)
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - exact.j).abs() <= 4.0 * se, "Ĵ {mean} ± {se} vs exact {}", exact.j);
}

#[test]
fn evaluation_rejects_mismatched_dimensions() {
    let mut env = GridNavigation::new("grid8", GridLayout::default()).unwrap();
    let policy = SquashedGaussianPolicy::new(3, 2, &[4], 1e-4, &mut Rng::new(0));
    assert!(evaluate_with(&policy, &mut env, 1, 10, true, &TrainingCosts::default(), 0).is_err());
}

#[test]
fn action_repeat_counts_primitive_steps() {
    let inner = PointHazard2D::new(PointHazardConfig { horizon: 40, ..PointHazardConfig::default() });
    let mut env = ActionRepeat::new(inner, 2).unwrap();
    let mut rng = Rng::new(1);
    env.reset(&mut rng);
    let mut micro = 0;
    let mut decisions = 0;
    loop {
        let out = env.step(&[0.2, -0.1], &mut rng);
        micro += out.micro_steps;
        decisions += 1;
        if out.terminal {
            break;
        }
    }
    assert_eq!(decisions, env.horizon());
    assert_eq!(micro, 40);
}

#[test]
fn same_seed_same_grid_trajectory() {
    let run = |seed| {
        let mut env = GridNavigation::new("grid8", GridLayout::default()).unwrap();
        let mut rng = Rng::new(seed);
        env.reset(&mut rng);
        (0..64).map(|t| env.step(&[(t as f64 * 0.37).sin(), 0.4], &mut rng).observation).collect::<Vec<_>>()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}
