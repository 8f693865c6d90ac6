//! The training loop: model learning, imagined rollouts, critics, policy and
//! multiplier updates, interleaved with real environment episodes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::cmdp::{episodic_cost_return, episodic_return, evaluate_policy, run_episode, MetricsReport, ReplayBuffer, TrainingCosts};
use crate::config::{Config, Variant};
use crate::critics::{CriticId, CriticSet};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::lagrangian::{policy_loss, LagrangeState, PolicyLoss};
use crate::nn::{clip_global_norm, Adam};
use crate::policy::{BoundPolicy, SquashedGaussianPolicy};
use crate::rng::Rng;
use crate::rollout::{initial_states_from_batch, simulated_interactions};
use crate::tensor::Tensor;
use crate::ucb::{critic_targets, estimate_bounds, BoundCritics, BoundMode, Bounds};
use crate::world_model::{model_train_step, ModelBatch, WorldModel, WorldModelParams};

/// Per-episode log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub env_steps: u64,
    /// Undiscounted return of the episode just collected.
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Jc")]
    pub jc: Vec<f64>,
    pub rho_c: f64,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub model_nll: f64,
    pub policy_loss: f64,
}

/// Per-update log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: u64,
    pub model_nll: f64,
    pub policy_loss: f64,
    /// Mean over roots of `(1/H) Σ_t V_λ` under the task bound.
    pub task_value: f64,
    /// Constraint estimates fed to the penalty and the multiplier update.
    pub jc_est: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub sim_interactions: u64,
}

/// How much of an update step to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Full,
    /// Samples the replay batch and advances the interaction counter only.
    CountOnly,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: Config,
    pub model: WorldModel,
    pub critics: CriticSet,
    pub policy: SquashedGaussianPolicy,
    policy_opt: Adam,
    pub lagrange: LagrangeState,
    pub replay: ReplayBuffer,
    pub training_costs: TrainingCosts,
    pub thresholds: Vec<f64>,
    rng: Rng,
    env_rng: Rng,
    pub sim_interactions: u64,
    pub updates: u64,
    pub episodes: usize,
}

impl Agent {
    pub fn new(cfg: Config, state_dim: usize, action_dim: usize, num_constraints: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(seed);
        let mut init = root.fork(0);
        let model = WorldModel::new(state_dim, action_dim, num_constraints, cfg.world_model_config(), cfg.swag_config(), &mut init)?;
        let critics = CriticSet::new(state_dim, num_constraints, cfg.critic_config(), &mut init);
        let hidden = vec![cfg.agent.hidden_units; cfg.agent.hidden_layers];
        let policy = SquashedGaussianPolicy::new(state_dim, action_dim, &hidden, cfg.agent.policy_min_stddev, &mut init);
        let lagrange = LagrangeState::new(
            num_constraints,
            cfg.safety.initial_lagrangian,
            cfg.safety.initial_penalty,
            cfg.safety.penalty_power_factor,
        )?;
        let mut thresholds = cfg.thresholds();
        thresholds.resize(num_constraints, f64::INFINITY);
        Ok(Self {
            policy_opt: Adam::new(policy.net.params()),
            replay: ReplayBuffer::new(cfg.agent.replay_capacity),
            model,
            critics,
            policy,
            lagrange,
            training_costs: TrainingCosts::default(),
            thresholds,
            rng: root.fork(1),
            env_rng: root.fork(2),
            sim_interactions: 0,
            updates: 0,
            episodes: 0,
            cfg,
        })
    }

    pub fn for_env(cfg: Config, env: &dyn Environment, seed: u64) -> Result<Self> {
        Self::new(cfg, env.observation_dim(), env.action_dim(), env.num_constraints(), seed)
    }

    pub fn variant(&self) -> Variant {
        self.cfg.agent.variant
    }

    /// Runs one training episode in `env` and appends it to the replay buffer.
    /// Returns `(return, cost returns, primitive steps)`.
    pub fn collect_episode(&mut self, env: &mut dyn Environment, random: bool) -> Result<(f64, Vec<f64>, u64)> {
        let policy = &self.policy;
        let act_dim = env.action_dim();
        let mut failure = None;
        let mut act = |obs: &[f64], rng: &mut Rng| -> Vec<f64> {
            if random {
                return (0..act_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            }
            policy.act(obs, false, rng).unwrap_or_else(|e| {
                failure = Some(e);
                vec![0.0; act_dim]
            })
        };
        let horizon = env.horizon();
        let (episode, micro) = run_episode(env, &mut act, horizon, &mut self.env_rng);
        if let Some(e) = failure {
            return Err(e);
        }
        let ret = episodic_return(&episode)?;
        let costs = (0..env.num_constraints()).map(|i| episodic_cost_return(&episode, i)).collect::<Result<Vec<_>>>()?;
        self.training_costs.record(costs.first().copied().unwrap_or(0.0), micro);
        self.replay.push(episode);
        self.episodes += 1;
        Ok((ret, costs, micro as u64))
    }

    /// One update step: model, bounds, critics, policy, multipliers.
    pub fn update_step(&mut self, mode: UpdateMode) -> Result<UpdateStats> {
        let b = self.cfg.world_model.batch_size;
        let shortest = self.replay.episodes().map(|e| e.len()).min().unwrap_or(0);
        let l = self.cfg.world_model.sequence_length.min(shortest);
        let h = self.cfg.general.sequence_generation_horizon;
        let n = self.cfg.swag.posterior_samples;
        let seqs = self.replay.sample_sequences(b, l, &mut self.rng)?;
        let roots = initial_states_from_batch(&seqs)?;
        let count = simulated_interactions(roots.rows(), h, n);
        if mode == UpdateMode::CountOnly {
            self.sim_interactions += count;
            self.updates += 1;
            return Ok(self.stats(f64::NAN, f64::NAN, f64::NAN, vec![], vec![], count));
        }
        let batch = ModelBatch::from_sequences(&seqs)?;
        let model_nll = model_train_step(&mut self.model, &batch)?;

        let models = self.model.posterior_samples(n, &mut self.rng)?;
        let mut g = Graph::new();
        let policy = self.policy.bind(&mut g, true);
        let critics = BoundCritics::shadows(&mut g, &self.critics);
        let obj = imagined_objective(
            &mut g,
            &models,
            &policy,
            &critics,
            &roots,
            h,
            self.variant().bound_mode(),
            &self.thresholds,
            &self.lagrange,
            self.variant().penalized(),
            &mut self.rng,
        )?;
        self.sim_interactions += count;
        let (bounds, task_value, loss) = (obj.bounds, obj.task_value, obj.loss);
        let jc_est: Vec<f64> = obj.jc.iter().map(|&j| g.value(j).item()).collect();
        let loss_value = g.value(loss.loss).item();
        let psi: Vec<f64> = loss.psi.iter().map(|&p| g.value(p).item()).collect();

        let (states, targets) = critic_targets(&g, &bounds.samples, |s| &s.task_values, bounds.task_choice.as_deref())?;
        self.critics.critic_train_step(CriticId::Task, &states, &targets)?;
        for i in 0..self.critics.num_constraints() {
            let choice = bounds.cost_choices.as_ref().map(|c| c[i].as_slice());
            let (states, targets) = critic_targets(&g, &bounds.samples, |s| &s.cost_values[i], choice)?;
            self.critics.critic_train_step(CriticId::Safety(i), &states, &targets)?;
        }

        let grads = g.backward(loss.loss)?;
        let mut pg = policy.net.grads(&grads);
        clip_global_norm(&mut pg, self.cfg.agent.clip_grad_norm);
        self.policy_opt.step(self.policy.net.params_mut(), &pg, self.cfg.general.policy_learning_rate);

        if self.variant().penalized() {
            self.lagrange = self.lagrange.lambda_update(&jc_est, &self.thresholds)?;
        }
        self.critics.maybe_clone_shadow();
        self.updates += 1;
        let task = g.value(task_value).item();
        Ok(self.stats(model_nll, loss_value, task, jc_est, psi, count))
    }

    fn stats(&self, model_nll: f64, policy_loss: f64, task_value: f64, jc_est: Vec<f64>, psi: Vec<f64>, count: u64) -> UpdateStats {
        UpdateStats {
            update: self.updates,
            model_nll,
            policy_loss,
            task_value,
            jc_est,
            psi,
            lambda: self.lagrange.lambda.clone(),
            mu: self.lagrange.mu,
            sim_interactions: count,
        }
    }

    /// `U` update steps followed by one policy episode. A non-finite training
    /// signal ends the update phase early with a warning.
    pub fn train_episode(&mut self, env: &mut dyn Environment, on_update: &mut dyn FnMut(&UpdateStats)) -> Result<EpisodeMetrics> {
        let (mut nll, mut pl, mut k) = (0.0, 0.0, 0usize);
        for _ in 0..self.cfg.general.update_steps {
            match self.update_step(UpdateMode::Full) {
                Ok(stats) => {
                    nll += stats.model_nll;
                    pl += stats.policy_loss;
                    k += 1;
                    on_update(&stats);
                }
                Err(Error::NonFinite(msg)) => {
                    log::warn!("episode {}: update aborted on non-finite value: {msg}", self.episodes);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let (j, jc, _) = self.collect_episode(env, false)?;
        let kf = k.max(1) as f64;
        Ok(EpisodeMetrics {
            episode: self.episodes,
            env_steps: self.training_costs.steps,
            j,
            jc,
            rho_c: self.training_costs.regret(),
            lambda: self.lagrange.lambda.clone(),
            mu: self.lagrange.mu,
            model_nll: if k > 0 { nll / kf } else { f64::NAN },
            policy_loss: if k > 0 { pl / kf } else { f64::NAN },
        })
    }

    /// Evaluation episodes with frozen networks. Uses its own random stream
    /// and leaves the training cost record untouched.
    pub fn evaluate(&self, env: &mut dyn Environment, episodes: usize, deterministic: bool, seed: u64) -> Result<MetricsReport> {
        let max_steps = self.eval_length(env);
        evaluate_with(&self.policy, env, episodes, max_steps, deterministic, &self.training_costs, seed)
    }

    pub fn eval_length(&self, env: &dyn Environment) -> usize {
        self.cfg.agent.eval_episode_length.unwrap_or(env.horizon())
    }
}

/// Policy objective built from imagined rollouts.
#[derive(Debug, Clone)]
pub struct ImaginedObjective {
    pub bounds: Bounds,
    /// `(1/H) Σ_t V_λ`, averaged over roots.
    pub task_value: NodeId,
    /// The same for each constraint.
    pub jc: Vec<NodeId>,
    pub loss: PolicyLoss,
}

/// Rolls out every posterior sample from `roots`, reduces the per-root scores
/// with `mode` and builds `-task + Σ Ψ(J_c)`.
#[allow(clippy::too_many_arguments)]
pub fn imagined_objective(
    g: &mut Graph,
    models: &[WorldModelParams],
    policy: &BoundPolicy,
    critics: &BoundCritics,
    roots: &Tensor,
    horizon: usize,
    mode: BoundMode,
    thresholds: &[f64],
    lagrange: &LagrangeState,
    penalize: bool,
    rng: &mut Rng,
) -> Result<ImaginedObjective> {
    let bounds = estimate_bounds(g, models, policy, critics, roots, horizon, mode, rng)?;
    let per_step = |g: &mut Graph, x: NodeId| {
        let m = g.mean(x);
        g.scale(m, 1.0 / horizon as f64)
    };
    let task_value = per_step(g, bounds.task);
    let jc: Vec<NodeId> = bounds.costs.iter().map(|&c| per_step(g, c)).collect();
    let loss = policy_loss(g, task_value, &jc, thresholds, lagrange, penalize)?;
    Ok(ImaginedObjective { bounds, task_value, jc, loss })
}

/// Evaluates `policy` for `episodes` episodes of at most `max_steps` decisions.
pub fn evaluate_with(
    policy: &SquashedGaussianPolicy,
    env: &mut dyn Environment,
    episodes: usize,
    max_steps: usize,
    deterministic: bool,
    training: &TrainingCosts,
    seed: u64,
) -> Result<MetricsReport> {
    if policy.state_dim() != env.observation_dim() || policy.action_dim != env.action_dim() {
        return Err(Error::Shape(format!(
            "policy maps {} → {} but the task has {} → {}",
            policy.state_dim(),
            policy.action_dim,
            env.observation_dim(),
            env.action_dim()
        )));
    }
    let mut failure = None;
    let mut act = |obs: &[f64], rng: &mut Rng| -> Vec<f64> {
        policy.act(obs, deterministic, rng).unwrap_or_else(|e| {
            failure = Some(e);
            vec![0.0; policy.action_dim]
        })
    };
    let report = evaluate_policy(env, &mut act, episodes, max_steps, training, &mut Rng::new(seed).fork(7))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub history: Vec<EpisodeMetrics>,
    pub scores: MetricsReport,
}

/// Seeds the replay buffer with random episodes, trains for
/// `cfg.agent.episodes` episodes and evaluates the final policy.
pub fn train(
    cfg: &Config,
    seed: u64,
    on_update: &mut dyn FnMut(&UpdateStats),
    on_episode: &mut dyn FnMut(&EpisodeMetrics),
) -> Result<TrainOutcome> {
    let mut env = cfg.make_env()?;
    let mut agent = Agent::for_env(cfg.clone(), env.as_ref(), seed)?;
    for _ in 0..cfg.agent.initial_random_episodes.max(1) {
        agent.collect_episode(env.as_mut(), true)?;
    }
    let mut history = Vec::with_capacity(cfg.agent.episodes);
    for _ in 0..cfg.agent.episodes {
        let m = agent.train_episode(env.as_mut(), on_update)?;
        log::info!(
            "episode {} J {:.3} Jc {:?} rho_c {:.4} lambda {:?} nll {:.3}",
            m.episode,
            m.j,
            m.jc,
            m.rho_c,
            m.lambda,
            m.model_nll
        );
        on_episode(&m);
        history.push(m);
    }
    let scores = agent.evaluate(env.as_mut(), cfg.agent.eval_episodes, cfg.agent.deterministic_eval, seed)?;
    Ok(TrainOutcome { agent, history, scores })
}
