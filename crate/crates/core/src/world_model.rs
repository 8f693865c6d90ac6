//! Learned dynamics, reward and cost model with a diagonal SWAG posterior.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_reparam_sample, Graph, NodeId};
use crate::cmdp::TransitionRecord;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, BoundMlp, Mlp};
use crate::rng::Rng;
use crate::tensor::Tensor;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    /// Weight of unsafe (`c = 1`) examples in the cost cross-entropy.
    pub unsafe_weight: f64,
    /// Added to the softplus of the next-state stddev.
    pub min_stddev: f64,
    pub clip_grad_norm: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            hidden_layers: 2,
            learning_rate: 1e-4,
            unsafe_weight: 10.0,
            min_stddev: 1e-2,
            clip_grad_norm: 100.0,
        }
    }
}

/// Point estimate θ of the world model.
///
/// The dynamics network maps `(s, a)` to the mean and pre-softplus stddev of a
/// Gaussian over the next state. The head network maps `(s, a)` to the reward
/// mean followed by one Bernoulli cost logit per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelParams {
    pub dynamics: Mlp,
    pub heads: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_costs: usize,
    pub min_stddev: f64,
}

impl WorldModelParams {
    pub fn new(state_dim: usize, action_dim: usize, num_costs: usize, cfg: &WorldModelConfig, rng: &mut Rng) -> Self {
        let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
        let sizes = |out: usize| {
            let mut s = vec![state_dim + action_dim];
            s.extend(&hidden);
            s.push(out);
            s
        };
        Self {
            dynamics: Mlp::new(&sizes(2 * state_dim), rng, true),
            heads: Mlp::new(&sizes(1 + num_costs), rng, true),
            state_dim,
            action_dim,
            num_costs,
            min_stddev: cfg.min_stddev,
        }
    }

    pub fn num_params(&self) -> usize {
        self.dynamics.num_params() + self.heads.num_params()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.dynamics.flat();
        v.extend(self.heads.flat());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.dynamics.num_params();
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} model parameters", flat.len(), self.num_params())));
        }
        self.dynamics.set_flat(&flat[..n])?;
        self.heads.set_flat(&flat[n..])
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        BoundModel {
            dynamics: self.dynamics.bind(g, trainable),
            heads: self.heads.bind(g, trainable),
            state_dim: self.state_dim,
            num_costs: self.num_costs,
            min_stddev: self.min_stddev,
        }
    }
}

/// Graph nodes of one model prediction for a batch of rows.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    pub next_mean: NodeId,
    pub next_stddev: NodeId,
    pub reward: NodeId,
    /// `[rows, C]` Bernoulli logits.
    pub cost_logits: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub dynamics: BoundMlp,
    pub heads: BoundMlp,
    state_dim: usize,
    num_costs: usize,
    min_stddev: f64,
}

impl BoundModel {
    pub fn outputs(&self, g: &mut Graph, s: NodeId, a: NodeId) -> Result<ModelOutputs> {
        let x = g.concat_cols(&[s, a])?;
        let d = self.dynamics.forward(g, x)?;
        let next_mean = g.slice_cols(d, 0, self.state_dim)?;
        let raw = g.slice_cols(d, self.state_dim, 2 * self.state_dim)?;
        let sp = g.softplus(raw);
        let next_stddev = g.offset(sp, self.min_stddev);
        let h = self.heads.forward(g, x)?;
        let reward = g.slice_cols(h, 0, 1)?;
        let cost_logits = g.slice_cols(h, 1, 1 + self.num_costs)?;
        Ok(ModelOutputs { next_mean, next_stddev, reward, cost_logits })
    }

    /// Reparameterized next-state sample, reward mean and cost probabilities.
    pub fn step(&self, g: &mut Graph, s: NodeId, a: NodeId, rng: &mut Rng) -> Result<(NodeId, NodeId, NodeId)> {
        let o = self.outputs(g, s, a)?;
        let next = gaussian_reparam_sample(g, o.next_mean, o.next_stddev, rng)?;
        let cost = g.sigmoid(o.cost_logits);
        Ok((next, o.reward, cost))
    }
}

/// Values of one model prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next_state: Tensor,
    pub reward: Tensor,
    pub cost_probability: Tensor,
}

/// Samples `s'`, and returns the reward mean and `sigmoid(cost logit)` for a batch.
pub fn predict(params: &WorldModelParams, s: &Tensor, a: &Tensor, rng: &mut Rng) -> Result<Prediction> {
    let mut g = Graph::new();
    let m = params.bind(&mut g, false);
    let (sn, an) = (g.constant(s.clone()), g.constant(a.clone()));
    let (next, reward, cost) = m.step(&mut g, sn, an, rng)?;
    Ok(Prediction {
        next_state: g.value(next).clone(),
        reward: g.value(reward).clone(),
        cost_probability: g.value(cost).clone(),
    })
}

/// Flattened transitions for a model update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub costs: Tensor,
    pub next_states: Tensor,
}

impl ModelBatch {
    pub fn from_sequences(seqs: &[&[TransitionRecord]]) -> Result<Self> {
        let rows: Vec<&TransitionRecord> = seqs.iter().flat_map(|s| s.iter()).collect();
        let first = rows.first().ok_or_else(|| Error::invalid("empty model batch"))?;
        let (ds, da, nc) = (first.state.len(), first.action.len(), first.costs.len());
        let n = rows.len();
        let collect = |f: &dyn Fn(&TransitionRecord) -> &[f64], w: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(n * w);
            for r in &rows {
                let v = f(r);
                if v.len() != w {
                    return Err(Error::Shape(format!("transition field of length {} where {w} expected", v.len())));
                }
                data.extend_from_slice(v);
            }
            Tensor::new(vec![n, w], data)
        };
        Ok(Self {
            states: collect(&|r| &r.state, ds)?,
            actions: collect(&|r| &r.action, da)?,
            rewards: Tensor::new(vec![n, 1], rows.iter().map(|r| r.reward).collect())?,
            costs: collect(&|r| &r.costs, nc)?,
            next_states: collect(&|r| &r.next_state, ds)?,
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Class-weighted Bernoulli cross-entropy `Σ w_i ℓ_i / Σ w_i` with weight
/// `unsafe_weight` on targets equal to 1.
pub fn weighted_bce(g: &mut Graph, logits: NodeId, targets: &Tensor, unsafe_weight: f64) -> Result<NodeId> {
    let weights = targets.map(|y| if y >= 0.5 { unsafe_weight } else { 1.0 });
    let total = weights.sum();
    // ℓ = softplus(z) - y z
    let sp = g.softplus(logits);
    let y = g.constant(targets.clone());
    let yz = g.mul(y, logits)?;
    let l = g.sub(sp, yz)?;
    let w = g.constant(weights);
    let wl = g.mul(w, l)?;
    let s = g.sum(wl);
    Ok(g.scale(s, 1.0 / total.max(f64::MIN_POSITIVE)))
}

/// Negative log-likelihood of a batch, as a graph node.
///
/// Gaussian NLL of the next state (summed over dimensions), unit-variance
/// Gaussian NLL of the reward and weighted cross-entropy of every cost.
pub fn model_loss(g: &mut Graph, m: &BoundModel, batch: &ModelBatch, unsafe_weight: f64) -> Result<NodeId> {
    let s = g.constant(batch.states.clone());
    let a = g.constant(batch.actions.clone());
    let o = m.outputs(g, s, a)?;
    let y = g.constant(batch.next_states.clone());
    let diff = g.sub(y, o.next_mean)?;
    let z = g.div(diff, o.next_stddev)?;
    let z2 = g.square(z);
    let half = g.scale(z2, 0.5);
    let logs = g.log(o.next_stddev);
    let per = g.add(half, logs)?;
    let summed = g.sum_cols(per);
    let dyn_nll = g.mean(summed);
    let dyn_nll = g.offset(dyn_nll, HALF_LN_2PI * batch.states.cols() as f64);
    let r = g.constant(batch.rewards.clone());
    let rd = g.sub(r, o.reward)?;
    let rd2 = g.square(rd);
    let rm = g.mean(rd2);
    let rew_nll = g.scale(rm, 0.5);
    let rew_nll = g.offset(rew_nll, HALF_LN_2PI);
    let mut total = g.add(dyn_nll, rew_nll)?;
    for i in 0..batch.costs.cols() {
        let logit = g.slice_cols(o.cost_logits, i, i + 1)?;
        let target = batch.costs.slice_cols(i, i + 1);
        let bce = weighted_bce(g, logit, &target, unsafe_weight)?;
        total = g.add(total, bce)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwagConfig {
    /// Model updates before weight averaging starts.
    pub burn_in_steps: u64,
    /// Model updates between snapshots.
    pub period_steps: u64,
    /// Averaging buffer length.
    pub models: usize,
    pub decay: f64,
    /// The learning rate climbs linearly from base to base × factor over each period.
    pub cyclic_lr_factor: f64,
}

impl Default for SwagConfig {
    fn default() -> Self {
        Self { burn_in_steps: 500, period_steps: 200, models: 20, decay: 0.8, cyclic_lr_factor: 5.0 }
    }
}

/// Diagonal Gaussian posterior over model parameters.
///
/// Snapshots of the iterates are taken every `period_steps` after burn-in and
/// kept in a buffer of `models` entries. The moments are exponentially
/// weighted averages over that buffer, with weight `decay^age` normalized to
/// sum to one, so the newest iterate dominates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwagPosterior {
    pub cfg: SwagConfig,
    snapshots: VecDeque<Vec<f64>>,
    running_mean: Vec<f64>,
    running_sq_mean: Vec<f64>,
    steps: u64,
}

impl SwagPosterior {
    pub fn new(cfg: SwagConfig) -> Result<Self> {
        if cfg.period_steps == 0 || cfg.models == 0 || !(0.0..=1.0).contains(&cfg.decay) || cfg.cyclic_lr_factor <= 0.0 {
            return Err(Error::Config(format!("invalid SWAG settings {cfg:?}")));
        }
        Ok(Self { cfg, snapshots: VecDeque::new(), running_mean: Vec::new(), running_sq_mean: Vec::new(), steps: 0 })
    }

    /// A fixed posterior with the given moments, ready for sampling.
    pub fn from_moments(mean: Vec<f64>, sq_mean: Vec<f64>) -> Result<Self> {
        if mean.len() != sq_mean.len() {
            return Err(Error::Shape(format!("moment lengths {} and {}", mean.len(), sq_mean.len())));
        }
        let cfg = SwagConfig { burn_in_steps: 0, ..SwagConfig::default() };
        let mut p = Self::new(cfg)?;
        p.running_mean = mean;
        p.running_sq_mean = sq_mean;
        Ok(p)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_ready(&self) -> bool {
        !self.running_mean.is_empty()
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_sq_mean(&self) -> &[f64] {
        &self.running_sq_mean
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    /// Learning rate for the next model update.
    pub fn learning_rate(&self, base: f64) -> f64 {
        if self.steps < self.cfg.burn_in_steps {
            return base;
        }
        let into = (self.steps - self.cfg.burn_in_steps) % self.cfg.period_steps;
        let phase = (into + 1) as f64 / self.cfg.period_steps as f64;
        base * (1.0 + (self.cfg.cyclic_lr_factor - 1.0) * phase)
    }

    /// Records one optimizer iterate; snapshots it at the end of each period.
    pub fn observe(&mut self, params: &[f64]) {
        self.steps += 1;
        if self.steps < self.cfg.burn_in_steps {
            return;
        }
        if (self.steps - self.cfg.burn_in_steps).is_multiple_of(self.cfg.period_steps) {
            self.push_snapshot(params);
        }
    }

    /// Adds an iterate to the averaging buffer and refreshes the moments.
    pub fn push_snapshot(&mut self, params: &[f64]) {
        if self.snapshots.len() == self.cfg.models {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back(params.to_vec());
        let n = params.len();
        let mut mean = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut total = 0.0;
        let mut w = 1.0;
        for snap in self.snapshots.iter().rev() {
            for i in 0..n {
                mean[i] += w * snap[i];
                sq[i] += w * snap[i] * snap[i];
            }
            total += w;
            w *= self.cfg.decay;
        }
        self.running_mean = mean.into_iter().map(|m| m / total).collect();
        self.running_sq_mean = sq.into_iter().map(|m| m / total).collect();
    }

    /// `max(E[θ²] - E[θ]², 0)`.
    pub fn variance(&self) -> Vec<f64> {
        self.running_mean.iter().zip(&self.running_sq_mean).map(|(m, s)| (s - m * m).max(0.0)).collect()
    }

    /// Draws every parameter independently from `N(mean, variance)`.
    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        if !self.is_ready() {
            return Err(Error::PosteriorNotReady { done: self.steps, required: self.cfg.burn_in_steps });
        }
        Ok(self.running_mean.iter().zip(self.variance()).map(|(m, v)| m + v.sqrt() * rng.normal()).collect())
    }
}

/// Parameters drawn from the posterior, shaped like `template`.
pub fn sample_parameters(posterior: &SwagPosterior, template: &WorldModelParams, rng: &mut Rng) -> Result<WorldModelParams> {
    let flat = posterior.sample(rng)?;
    let mut p = template.clone();
    p.set_flat(&flat)?;
    Ok(p)
}

/// Trainable world model: point estimate, optimizer state and posterior.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub cfg: WorldModelConfig,
    pub params: WorldModelParams,
    pub posterior: SwagPosterior,
    optimizer: Adam,
}

impl WorldModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        num_costs: usize,
        cfg: WorldModelConfig,
        swag: SwagConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let params = WorldModelParams::new(state_dim, action_dim, num_costs, &cfg, rng);
        let mut all = params.dynamics.params().to_vec();
        all.extend(params.heads.params().iter().cloned());
        Ok(Self { optimizer: Adam::new(&all), cfg, params, posterior: SwagPosterior::new(swag)? })
    }

    /// `n` parameter sets for posterior sampling. Before burn-in every set is
    /// the point estimate.
    pub fn posterior_samples(&self, n: usize, rng: &mut Rng) -> Result<Vec<WorldModelParams>> {
        (0..n)
            .map(|_| {
                if self.posterior.is_ready() {
                    sample_parameters(&self.posterior, &self.params, rng)
                } else {
                    Ok(self.params.clone())
                }
            })
            .collect()
    }
}

/// One Adam step on the model negative log-likelihood.
///
/// Returns the loss before the step. A non-finite loss leaves the model
/// untouched and is reported as an error.
pub fn model_train_step(model: &mut WorldModel, batch: &ModelBatch) -> Result<f64> {
    let mut g = Graph::new();
    let m = model.params.bind(&mut g, true);
    let loss = model_loss(&mut g, &m, batch, model.cfg.unsafe_weight)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("model loss {value}")));
    }
    let grads = g.backward(loss)?;
    // Clipped per network so the sharp dynamics likelihood cannot starve the heads.
    let mut gs = m.dynamics.grads(&grads);
    clip_global_norm(&mut gs, model.cfg.clip_grad_norm);
    let mut head_grads = m.heads.grads(&grads);
    clip_global_norm(&mut head_grads, model.cfg.clip_grad_norm);
    gs.extend(head_grads);
    let lr = model.posterior.learning_rate(model.cfg.learning_rate);
    let mut params: Vec<Tensor> = model.params.dynamics.params().to_vec();
    params.extend(model.params.heads.params().iter().cloned());
    model.optimizer.step(&mut params, &gs, lr);
    let nd = model.params.dynamics.params().len();
    for (dst, src) in model.params.dynamics.params_mut().iter_mut().zip(&params[..nd]) {
        *dst = src.clone();
    }
    for (dst, src) in model.params.heads.params_mut().iter_mut().zip(&params[nd..]) {
        *dst = src.clone();
    }
    model.posterior.observe(&model.params.flat());
    Ok(value)
}
