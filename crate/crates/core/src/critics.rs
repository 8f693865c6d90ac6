//! TD(λ) targets, task and safety critics with lagged shadow copies.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, Mlp};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `V_t = r_t + γ [(1 - λ) v_{t+1} + λ V_{t+1}]` with `V_H = v_H`.
///
/// `values` holds `v(s_0) .. v(s_H)`, one more entry than `rewards`.
pub fn td_lambda(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Shape(format!("{} rewards need {} values, got {}", rewards.len(), rewards.len() + 1, values.len())));
    }
    let h = rewards.len();
    let mut out = vec![0.0; h];
    let mut next = values[h];
    for t in (0..h).rev() {
        next = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * next);
        out[t] = next;
    }
    Ok(out)
}

/// Batched graph version of [`td_lambda`]; every node is a `[rows, 1]` column.
pub fn td_lambda_nodes(g: &mut Graph, rewards: &[NodeId], values: &[NodeId], gamma: f64, lambda: f64) -> Result<Vec<NodeId>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Shape(format!("{} rewards need {} values, got {}", rewards.len(), rewards.len() + 1, values.len())));
    }
    let h = rewards.len();
    let mut out = Vec::with_capacity(h);
    let mut next = values[h];
    for t in (0..h).rev() {
        let boot = g.scale(values[t + 1], 1.0 - lambda);
        let carry = g.scale(next, lambda);
        let mix = g.add(boot, carry)?;
        let disc = g.scale(mix, gamma);
        next = g.add(rewards[t], disc)?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub critic_learning_rate: f64,
    pub safety_critic_learning_rate: f64,
    pub discount_factor: f64,
    pub safety_discount_factor: f64,
    pub td_lambda_factor: f64,
    /// Shadow copies are refreshed every this many critic updates.
    pub update_steps: u64,
    pub clip_grad_norm: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            hidden_layers: 2,
            critic_learning_rate: 8e-5,
            safety_critic_learning_rate: 2e-4,
            discount_factor: 0.99,
            safety_discount_factor: 0.995,
            td_lambda_factor: 0.95,
            update_steps: 100,
            clip_grad_norm: 100.0,
        }
    }
}

/// Which value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticId {
    Task,
    Safety(usize),
}

/// Task critic, one safety critic per constraint and their shadows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticSet {
    pub cfg: CriticConfig,
    pub task: Mlp,
    pub safety: Vec<Mlp>,
    pub task_shadow: Mlp,
    pub safety_shadow: Vec<Mlp>,
    #[serde(skip)]
    optimizers: Vec<Option<Adam>>,
    pub steps_since_clone: u64,
}

impl CriticSet {
    pub fn new(state_dim: usize, num_constraints: usize, cfg: CriticConfig, rng: &mut Rng) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend(vec![cfg.hidden_units; cfg.hidden_layers]);
        sizes.push(1);
        let task = Mlp::new(&sizes, rng, true);
        let safety: Vec<Mlp> = (0..num_constraints).map(|_| Mlp::new(&sizes, rng, true)).collect();
        Self {
            task_shadow: task.clone(),
            safety_shadow: safety.clone(),
            task,
            safety,
            optimizers: vec![None; num_constraints + 1],
            steps_since_clone: 0,
            cfg,
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.safety.len()
    }

    pub fn main(&self, id: CriticId) -> &Mlp {
        match id {
            CriticId::Task => &self.task,
            CriticId::Safety(i) => &self.safety[i],
        }
    }

    pub fn shadow(&self, id: CriticId) -> &Mlp {
        match id {
            CriticId::Task => &self.task_shadow,
            CriticId::Safety(i) => &self.safety_shadow[i],
        }
    }

    pub fn discount(&self, id: CriticId) -> f64 {
        match id {
            CriticId::Task => self.cfg.discount_factor,
            CriticId::Safety(_) => self.cfg.safety_discount_factor,
        }
    }

    fn slot(&self, id: CriticId) -> usize {
        match id {
            CriticId::Task => 0,
            CriticId::Safety(i) => i + 1,
        }
    }

    /// One Adam step on `mean(½ (v(s) - target)²)` over all rows, which is
    /// the `1/(2H) Σ_t` loss averaged over roots. Returns the loss before the step.
    pub fn critic_train_step(&mut self, id: CriticId, states: &Tensor, targets: &Tensor) -> Result<f64> {
        if states.rows() != targets.rows() || targets.cols() != 1 {
            return Err(Error::Shape(format!("states {:?} with targets {:?}", states.shape(), targets.shape())));
        }
        let mut g = Graph::new();
        let net = self.main(id).bind(&mut g, true);
        let x = g.constant(states.clone());
        let v = net.forward(&mut g, x)?;
        let y = g.constant(targets.clone());
        let loss = critic_loss(&mut g, v, y)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("critic loss {value}")));
        }
        let mut grads = net.grads(&g.backward(loss)?);
        clip_global_norm(&mut grads, self.cfg.clip_grad_norm);
        let lr = match id {
            CriticId::Task => self.cfg.critic_learning_rate,
            CriticId::Safety(_) => self.cfg.safety_critic_learning_rate,
        };
        let slot = self.slot(id);
        if self.optimizers.len() <= slot {
            self.optimizers.resize(self.safety.len() + 1, None);
        }
        let net = match id {
            CriticId::Task => &mut self.task,
            CriticId::Safety(i) => &mut self.safety[i],
        };
        let opt = self.optimizers[slot].get_or_insert_with(|| Adam::new(net.params()));
        opt.step(net.params_mut(), &grads, lr);
        Ok(value)
    }

    /// Counts one update step and copies main into shadow every `update_steps`.
    /// Returns whether a copy happened.
    pub fn maybe_clone_shadow(&mut self) -> bool {
        self.steps_since_clone += 1;
        if self.steps_since_clone >= self.cfg.update_steps.max(1) {
            self.task_shadow = self.task.clone();
            self.safety_shadow = self.safety.clone();
            self.steps_since_clone = 0;
            true
        } else {
            false
        }
    }
}

/// `mean(½ (v - y)²)`.
pub fn critic_loss(g: &mut Graph, v: NodeId, y: NodeId) -> Result<NodeId> {
    let d = g.sub(v, y)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}
