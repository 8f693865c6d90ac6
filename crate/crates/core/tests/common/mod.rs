//! Oracles and fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use lambda_core::agent::imagined_objective;
use lambda_core::autodiff::{gaussian_reparam_sample, Graph, NodeId};
use lambda_core::critics::{td_lambda_nodes, CriticConfig, CriticSet};
use lambda_core::envs::TabularCmdp;
use lambda_core::lagrangian::{penalty_psi, penalty_psi_value, LagrangeState};
use lambda_core::lp::{exact_policy_eval, TabularPolicy};
use lambda_core::nn::Mlp;
use lambda_core::policy::SquashedGaussianPolicy;
use lambda_core::rng::Rng;
use lambda_core::tensor::Tensor;
use lambda_core::ucb::{estimate_bounds, BoundCritics, BoundMode, Bounds};
use lambda_core::world_model::{sample_parameters, SwagPosterior, WorldModelConfig, WorldModelParams};

/// `‖a - b‖ / max(‖b‖, 1e-8)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub type Build = fn(&mut Graph, NodeId, NodeId) -> NodeId;

/// Named operations of two `[2, 3]` inputs.
pub fn primitives() -> Vec<(&'static str, Build)> {
    vec![
        ("neg", |g, x, _| g.neg(x)),
        ("tanh", |g, x, _| g.tanh(x)),
        ("softplus", |g, x, _| g.softplus(x)),
        ("exp", |g, x, _| g.exp(x)),
        ("log", |g, x, _| {
            let s = g.square(x);
            let p = g.offset(s, 0.5);
            g.log(p)
        }),
        ("square", |g, x, _| g.square(x)),
        ("relu", |g, x, _| g.relu(x)),
        ("elu", |g, x, _| g.elu(x)),
        ("sigmoid", |g, x, _| g.sigmoid(x)),
        ("add", |g, x, y| g.add(x, y).unwrap()),
        ("sub", |g, x, y| g.sub(x, y).unwrap()),
        ("mul", |g, x, y| g.mul(x, y).unwrap()),
        ("div", |g, x, y| {
            let s = g.square(y);
            let d = g.offset(s, 0.7);
            g.div(x, d).unwrap()
        }),
        ("scale_offset", |g, x, _| {
            let s = g.scale(x, -1.7);
            g.offset(s, 0.3)
        }),
        ("matmul", |g, x, y| {
            let t = g.slice_cols(y, 0, 2).unwrap();
            let w = g.concat_rows(&[t, t]).unwrap();
            let w = g.slice_rows(w, 0, 3).unwrap();
            g.matmul(x, w).unwrap()
        }),
        ("sum", |g, x, _| g.sum(x)),
        ("mean", |g, x, _| g.mean(x)),
        ("sum_cols", |g, x, _| g.sum_cols(x)),
        ("slice_concat_cols", |g, x, y| {
            let a = g.slice_cols(x, 1, 3).unwrap();
            let b = g.slice_cols(y, 0, 1).unwrap();
            g.concat_cols(&[a, b, a]).unwrap()
        }),
        ("slice_concat_rows", |g, x, y| {
            let a = g.slice_rows(x, 1, 2).unwrap();
            g.concat_rows(&[a, y, a]).unwrap()
        }),
        ("pick_rows", |g, x, y| g.pick_rows(&[x, y], &[1, 0]).unwrap()),
        ("row_broadcast", |g, x, y| {
            let b = g.slice_rows(y, 0, 1).unwrap();
            g.add(x, b).unwrap()
        }),
        ("reparam", |g, x, y| {
            let s = g.softplus(y);
            gaussian_reparam_sample(g, x, s, &mut Rng::new(5)).unwrap()
        }),
    ]
}

/// `Σ w ⊙ op(x, y)` and its gradient with respect to the concatenated inputs.
pub fn weighted(op: Build, input: &[f64], weight_seed: u64) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2, 3], input[..6].to_vec()).unwrap());
    let y = g.param(Tensor::new(vec![2, 3], input[6..].to_vec()).unwrap());
    let out = op(&mut g, x, y);
    let shape = g.value(out).shape().to_vec();
    let mut rng = Rng::new(weight_seed);
    let w = g.constant(Tensor::new(shape.clone(), rng.normals(shape.iter().product())).unwrap());
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    let mut flat = grads.wrt(x).into_data();
    flat.extend(grads.wrt(y).into_data());
    (g.value(loss).item(), flat)
}

/// Inputs bounded away from zero so that relu and elu stay off their kink.
pub fn away_from_zero(rng: &mut Rng) -> Vec<f64> {
    (0..12).map(|_| (0.2 + 1.3 * rng.uniform()) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect()
}

/// TD(λ) target as the explicit mixture of n-step returns.
pub fn td_lambda_expanded(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let h = rewards.len();
    (0..h)
        .map(|t| {
            let n_step = |n: usize| {
                let disc: f64 = (0..n).map(|k| gamma.powi(k as i32) * rewards[t + k]).sum();
                disc + gamma.powi(n as i32) * values[t + n]
            };
            let tail = h - t;
            let mixed: f64 = (1..tail).map(|n| (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n)).sum();
            mixed + lambda.powi(tail as i32 - 1) * n_step(tail)
        })
        .collect()
}

fn random_distribution(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Random dense CMDP with one cost. The threshold sits just above the cost of
/// a random deterministic policy, so the problem is feasible.
pub fn random_cmdp(rng: &mut Rng, max_states: usize, max_actions: usize, max_horizon: usize) -> TabularCmdp {
    let ns = 2 + rng.below(max_states - 1);
    let na = 2 + rng.below(max_actions - 1);
    let horizon = 1 + rng.below(max_horizon);
    let transitions = (0..ns * na).flat_map(|_| random_distribution(rng, ns)).collect();
    let rewards = (0..ns * na).map(|_| rng.uniform()).collect();
    let costs = vec![(0..ns * na).map(|_| if rng.uniform() < 0.5 { rng.uniform() } else { 0.0 }).collect()];
    let initial = random_distribution(rng, ns);
    let mut cmdp = TabularCmdp { n_states: ns, n_actions: na, horizon, transitions, rewards, costs, initial, thresholds: vec![f64::INFINITY] };
    let actions: Vec<usize> = (0..horizon * ns).map(|_| rng.below(na)).collect();
    let pi = TabularPolicy::deterministic(horizon, ns, na, &actions).unwrap();
    let base = exact_policy_eval(&cmdp, &pi).unwrap().jc[0];
    cmdp.thresholds = vec![base + 0.2 * rng.uniform()];
    cmdp
}

/// Best value among feasible deterministic Markov policies. Enumerates all of
/// them when there are at most `limit`, otherwise scores `limit` random ones.
/// Returns the best value and the number of policies scored.
pub fn best_deterministic(cmdp: &TabularCmdp, limit: usize, rng: &mut Rng) -> (f64, usize) {
    let cells = cmdp.horizon * cmdp.n_states;
    let na = cmdp.n_actions;
    let total = (na as f64).powi(cells as i32);
    let mut best = f64::NEG_INFINITY;
    let mut score = |actions: &[usize]| {
        let pi = TabularPolicy::deterministic(cmdp.horizon, cmdp.n_states, na, actions).unwrap();
        let v = exact_policy_eval(cmdp, &pi).unwrap();
        if v.jc.iter().zip(&cmdp.thresholds).all(|(j, d)| *j <= d + 1e-12) {
            best = best.max(v.j);
        }
    };
    if total <= limit as f64 {
        let mut actions = vec![0; cells];
        for _ in 0..total as usize {
            score(&actions);
            for a in actions.iter_mut() {
                *a += 1;
                if *a < na {
                    break;
                }
                *a = 0;
            }
        }
        (best, total as usize)
    } else {
        for _ in 0..limit {
            let actions: Vec<usize> = (0..cells).map(|_| rng.below(na)).collect();
            score(&actions);
        }
        (best, limit)
    }
}

fn randomize(net: &mut Mlp, rng: &mut Rng, scale: f64) {
    for p in net.params_mut() {
        for x in p.data_mut() {
            *x = scale * rng.normal();
        }
    }
}

/// Two-step imagined objective on a one-dimensional task with random networks.
pub struct ComposedToy {
    pub policy: SquashedGaussianPolicy,
    pub models: Vec<WorldModelParams>,
    pub critics: CriticSet,
    pub lagrange: LagrangeState,
    pub thresholds: Vec<f64>,
    pub roots: Tensor,
    pub horizon: usize,
    pub rollout_seed: u64,
}

impl ComposedToy {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut policy = SquashedGaussianPolicy::new(1, 1, &[4], 1e-2, &mut rng);
        randomize(&mut policy.net, &mut rng, 0.5);
        let wm = WorldModelConfig { hidden_units: 4, hidden_layers: 1, ..WorldModelConfig::default() };
        let models = (0..3)
            .map(|_| {
                let mut m = WorldModelParams::new(1, 1, 1, &wm, &mut rng);
                randomize(&mut m.dynamics, &mut rng, 0.4);
                randomize(&mut m.heads, &mut rng, 0.4);
                m
            })
            .collect();
        let cfg = CriticConfig { hidden_units: 4, hidden_layers: 1, ..CriticConfig::default() };
        let mut critics = CriticSet::new(1, 1, cfg, &mut rng);
        randomize(&mut critics.task_shadow, &mut rng, 0.5);
        randomize(&mut critics.safety_shadow[0], &mut rng, 0.5);
        let lagrange = LagrangeState { lambda: vec![0.7], mu: 1.5, mu_growth: 1.0 };
        let roots = Tensor::column(&[-0.6, 0.1, 0.8]);
        Self { policy, models, critics, lagrange, thresholds: vec![-5.0], roots, horizon: 2, rollout_seed: seed + 1 }
    }

    /// Loss and its gradient with respect to the flat policy parameters, under
    /// a fixed rollout noise stream.
    pub fn loss_and_grad(&self, flat: &[f64]) -> (f64, Vec<f64>) {
        let mut policy = self.policy.clone();
        policy.net.set_flat(flat).unwrap();
        let mut g = Graph::new();
        let bp = policy.bind(&mut g, true);
        let bc = BoundCritics::shadows(&mut g, &self.critics);
        let obj = imagined_objective(
            &mut g,
            &self.models,
            &bp,
            &bc,
            &self.roots,
            self.horizon,
            BoundMode::Optimistic,
            &self.thresholds,
            &self.lagrange,
            true,
            &mut Rng::new(self.rollout_seed),
        )
        .unwrap();
        let grads = g.backward(obj.loss.loss).unwrap();
        let flat_grad = bp.net.grads(&grads).iter().flat_map(|t| t.data().to_vec()).collect();
        (g.value(obj.loss.loss).item(), flat_grad)
    }

    /// States the policy is conditioned on, per posterior sample and step.
    pub fn conditioning_states(&self, flat: &[f64]) -> Vec<Vec<Tensor>> {
        let mut policy = self.policy.clone();
        policy.net.set_flat(flat).unwrap();
        let mut g = Graph::new();
        let bp = policy.bind(&mut g, false);
        let bc = BoundCritics::shadows(&mut g, &self.critics);
        let mut rng = Rng::new(self.rollout_seed);
        let b = estimate_bounds(&mut g, &self.models, &bp, &bc, &self.roots, self.horizon, BoundMode::Optimistic, &mut rng).unwrap();
        b.samples.iter().map(|s| s.trajectory.states[..self.horizon].iter().map(|&n| g.value(n).clone()).collect()).collect()
    }

    /// The same objective rebuilt step by step, with the policy conditioned on
    /// the given fixed states. This is the function whose plain derivative the
    /// detached-conditioning gradient equals.
    pub fn loss_with_fixed_conditioning(&self, flat: &[f64], inputs: &[Vec<Tensor>]) -> f64 {
        let mut policy = self.policy.clone();
        policy.net.set_flat(flat).unwrap();
        let mut g = Graph::new();
        let bp = policy.bind(&mut g, false);
        let task_critic = self.critics.task_shadow.bind(&mut g, false);
        let cost_critic = self.critics.safety_shadow[0].bind(&mut g, false);
        let cfg = &self.critics.cfg;
        let mut rng = Rng::new(self.rollout_seed);
        let s0 = g.constant(self.roots.clone());
        let mut task_sums = Vec::new();
        let mut cost_sums = Vec::new();
        for (model, fixed) in self.models.iter().zip(inputs) {
            let m = model.bind(&mut g, false);
            let mut states = vec![s0];
            let (mut rewards, mut costs) = (Vec::new(), Vec::new());
            for t in 0..self.horizon {
                let input = g.constant(fixed[t].clone());
                let a = bp.sample(&mut g, input, &mut rng).unwrap();
                let (next, r, c) = m.step(&mut g, states[t], a, &mut rng).unwrap();
                states.push(next);
                rewards.push(r);
                costs.push(c);
            }
            let v: Vec<_> = states.iter().map(|&s| task_critic.forward(&mut g, s).unwrap()).collect();
            let vc: Vec<_> = states.iter().map(|&s| cost_critic.forward(&mut g, s).unwrap()).collect();
            let task = td_lambda_nodes(&mut g, &rewards, &v, cfg.discount_factor, cfg.td_lambda_factor).unwrap();
            let cost = td_lambda_nodes(&mut g, &costs, &vc, cfg.safety_discount_factor, cfg.td_lambda_factor).unwrap();
            let sum = |g: &mut Graph, xs: &[NodeId]| xs[1..].iter().fold(xs[0], |acc, &x| g.add(acc, x).unwrap());
            task_sums.push(sum(&mut g, &task));
            cost_sums.push(sum(&mut g, &cost));
        }
        let per_root_max = |g: &Graph, nodes: &[NodeId]| -> f64 {
            let roots = g.value(nodes[0]).rows();
            let total: f64 = (0..roots)
                .map(|r| nodes.iter().map(|&n| g.value(n).data()[r]).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            total / roots as f64 / self.horizon as f64
        };
        let task = per_root_max(&g, &task_sums);
        let jc = per_root_max(&g, &cost_sums);
        let psi = penalty_psi_value(jc, self.thresholds[0], self.lagrange.lambda[0], self.lagrange.mu).unwrap();
        -task + psi
    }
}

/// Alternates gradient descent on `x² + Ψ(1 - x)` with multiplier updates,
/// solving `max -x²` subject to `1 - x ≤ 0`. Returns the final `(x, λ)`.
pub fn kkt_run(x0: f64, lambda0: f64) -> (f64, f64) {
    let mut x = x0;
    let mut state = LagrangeState { lambda: vec![lambda0], mu: 1.0, mu_growth: 1.01 };
    for _ in 0..200 {
        for _ in 0..50 {
            let mut g = Graph::new();
            let xn = g.param(Tensor::scalar(x));
            let obj = g.square(xn);
            let neg = g.neg(xn);
            let jc = g.offset(neg, 1.0);
            let psi = penalty_psi(&mut g, jc, 0.0, state.lambda[0], state.mu).unwrap();
            let loss = g.add(obj, psi).unwrap();
            let grad = g.backward(loss).unwrap().wrt(xn).item();
            x -= 0.1 * grad;
        }
        state = state.lambda_update(&[1.0 - x], &[0.0]).unwrap();
    }
    (x, state.lambda[0])
}

/// A fixed Gaussian posterior around a random model, plus a random policy and critics.
pub struct UcbFixture {
    pub posterior: SwagPosterior,
    pub template: WorldModelParams,
    pub policy: SquashedGaussianPolicy,
    pub critics: CriticSet,
    pub roots: Tensor,
}

impl UcbFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let wm = WorldModelConfig { hidden_units: 8, hidden_layers: 1, ..WorldModelConfig::default() };
        let mut template = WorldModelParams::new(2, 2, 2, &wm, &mut rng);
        randomize(&mut template.dynamics, &mut rng, 0.3);
        randomize(&mut template.heads, &mut rng, 0.3);
        let mean = template.flat();
        let sq_mean = mean.iter().map(|m| m * m + 0.02).collect();
        let posterior = SwagPosterior::from_moments(mean, sq_mean).unwrap();
        let mut policy = SquashedGaussianPolicy::new(2, 2, &[8], 1e-2, &mut rng);
        randomize(&mut policy.net, &mut rng, 0.3);
        let cfg = CriticConfig { hidden_units: 8, hidden_layers: 1, ..CriticConfig::default() };
        let mut critics = CriticSet::new(2, 2, cfg, &mut rng);
        randomize(&mut critics.task_shadow, &mut rng, 0.3);
        for c in &mut critics.safety_shadow {
            randomize(c, &mut rng, 0.3);
        }
        let roots = Tensor::from_rows(&(0..6).map(|_| vec![rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]).collect::<Vec<_>>()).unwrap();
        Self { posterior, template, policy, critics, roots }
    }

    /// The first `n` draws of one fixed sample stream.
    pub fn models(&self, n: usize) -> Vec<WorldModelParams> {
        let mut rng = Rng::new(1234);
        (0..n).map(|_| sample_parameters(&self.posterior, &self.template, &mut rng).unwrap()).collect()
    }

    pub fn bounds(&self, models: &[WorldModelParams], mode: BoundMode) -> (Graph, Bounds) {
        let mut g = Graph::new();
        let bp = self.policy.bind(&mut g, true);
        let bc = BoundCritics::shadows(&mut g, &self.critics);
        let b = estimate_bounds(&mut g, models, &bp, &bc, &self.roots, 4, mode, &mut Rng::new(99)).unwrap();
        (g, b)
    }
}

pub fn column(g: &Graph, n: NodeId) -> Vec<f64> {
    g.value(n).data().to_vec()
}
