//! Optimistic and pessimistic value bounds from posterior samples.
//!
//! Each posterior sample gives one imagined trajectory per root and, for every
//! critic, the per-root score `Σ_t V_λ(s_t)`. The optimistic task bound and
//! each pessimistic cost bound take the per-root maximum over samples,
//! independently of one another. The greedy variant averages instead.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::critics::{td_lambda_nodes, CriticSet};
use crate::error::{Error, Result};
use crate::nn::BoundMlp;
use crate::policy::BoundPolicy;
use crate::rng::Rng;
use crate::rollout::{generate_sequence, Trajectory};
use crate::tensor::Tensor;
use crate::world_model::WorldModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Per-root maximum over samples.
    #[default]
    Optimistic,
    /// Per-root mean over samples.
    Greedy,
}

/// Index of the largest entry of each row across candidates, lowest index on ties.
pub fn argmax_per_root(scores: &[&[f64]]) -> Result<Vec<usize>> {
    let first = scores.first().ok_or_else(|| Error::invalid("at least one posterior sample is required"))?;
    let roots = first.len();
    if scores.iter().any(|s| s.len() != roots) {
        return Err(Error::Shape("candidate score lengths differ".into()));
    }
    Ok((0..roots)
        .map(|r| {
            let mut best = 0;
            for (j, s) in scores.iter().enumerate().skip(1) {
                if s[r] > scores[best][r] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Per-root selection and the selected `[roots, 1]` node.
#[derive(Debug, Clone)]
pub struct Bound {
    pub value: NodeId,
    pub choice: Vec<usize>,
}

/// Per-root maximum over candidate `[roots, 1]` nodes. Gradient reaches only
/// the selected candidate of each root.
pub fn upper_bound_values(g: &mut Graph, candidates: &[NodeId]) -> Result<Bound> {
    let scores: Vec<Vec<f64>> = candidates.iter().map(|&c| g.value(c).data().to_vec()).collect();
    let refs: Vec<&[f64]> = scores.iter().map(|s| s.as_slice()).collect();
    let choice = argmax_per_root(&refs)?;
    let value = g.pick_rows(candidates, &choice)?;
    Ok(Bound { value, choice })
}

/// The same maximization applied to one constraint's candidates.
pub fn pessimistic_cost_bound(g: &mut Graph, candidates: &[NodeId]) -> Result<Bound> {
    upper_bound_values(g, candidates)
}

/// Per-root mean over candidates.
pub fn greedy_mean_values(g: &mut Graph, candidates: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = candidates.split_first().ok_or_else(|| Error::invalid("at least one posterior sample is required"))?;
    let mut acc = first;
    for &c in rest {
        acc = g.add(acc, c)?;
    }
    Ok(g.scale(acc, 1.0 / candidates.len() as f64))
}

/// Shadow critics bound as graph constants.
#[derive(Debug, Clone)]
pub struct BoundCritics {
    pub task: BoundMlp,
    pub safety: Vec<BoundMlp>,
    pub discount: f64,
    pub safety_discount: f64,
    pub td_lambda: f64,
}

impl BoundCritics {
    pub fn shadows(g: &mut Graph, critics: &CriticSet) -> Self {
        Self {
            task: critics.task_shadow.bind(g, false),
            safety: critics.safety_shadow.iter().map(|c| c.bind(g, false)).collect(),
            discount: critics.cfg.discount_factor,
            safety_discount: critics.cfg.safety_discount_factor,
            td_lambda: critics.cfg.td_lambda_factor,
        }
    }
}

/// One posterior sample's trajectory and TD(λ) values.
#[derive(Debug, Clone)]
pub struct SampleEstimate {
    pub trajectory: Trajectory,
    /// `V_λ(s_t)` for `t < H`, each `[roots, 1]`.
    pub task_values: Vec<NodeId>,
    /// `V^i_λ(s_t)` per constraint.
    pub cost_values: Vec<Vec<NodeId>>,
    /// `Σ_t V_λ(s_t)` per root.
    pub task_sum: NodeId,
    pub cost_sums: Vec<NodeId>,
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> Result<NodeId> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n)?;
    }
    Ok(acc)
}

/// Critic values `v(s_0) .. v(s_H)` evaluated in one batched pass.
fn values_along(g: &mut Graph, critic: &BoundMlp, states: &[NodeId]) -> Result<Vec<NodeId>> {
    let roots = g.value(states[0]).rows();
    let stacked = g.concat_rows(states)?;
    let v = critic.forward(g, stacked)?;
    (0..states.len()).map(|t| g.slice_rows(v, t * roots, (t + 1) * roots)).collect()
}

/// Rolls out one model sample from `roots` and computes its TD(λ) values.
pub fn estimate_sample(
    g: &mut Graph,
    model: &WorldModelParams,
    policy: &BoundPolicy,
    critics: &BoundCritics,
    roots: NodeId,
    horizon: usize,
    rng: &mut Rng,
) -> Result<SampleEstimate> {
    let m = model.bind(g, false);
    let trajectory = generate_sequence(g, &m, policy, roots, horizon, rng)?;
    if trajectory.truncated {
        return Err(Error::NonFinite(format!("imagined trajectory truncated at {} steps", trajectory.horizon())));
    }
    let v = values_along(g, &critics.task, &trajectory.states)?;
    let task_values = td_lambda_nodes(g, &trajectory.rewards, &v, critics.discount, critics.td_lambda)?;
    let task_sum = sum_nodes(g, &task_values)?;
    let mut cost_values = Vec::new();
    let mut cost_sums = Vec::new();
    for (i, critic) in critics.safety.iter().enumerate() {
        let vc = values_along(g, critic, &trajectory.states)?;
        let costs: Vec<NodeId> = trajectory.costs.iter().map(|&c| g.slice_cols(c, i, i + 1)).collect::<Result<_>>()?;
        let vals = td_lambda_nodes(g, &costs, &vc, critics.safety_discount, critics.td_lambda)?;
        cost_sums.push(sum_nodes(g, &vals)?);
        cost_values.push(vals);
    }
    Ok(SampleEstimate { trajectory, task_values, cost_values, task_sum, cost_sums })
}

/// Bounds over all samples for the task and every constraint.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub samples: Vec<SampleEstimate>,
    /// Per-root `Σ_t V_λ` after the max (or mean) over samples.
    pub task: NodeId,
    pub costs: Vec<NodeId>,
    /// Selected sample per root, absent in greedy mode.
    pub task_choice: Option<Vec<usize>>,
    pub cost_choices: Option<Vec<Vec<usize>>>,
}

/// Runs one rollout per model sample and reduces the scores per root.
pub fn estimate_bounds(
    g: &mut Graph,
    models: &[WorldModelParams],
    policy: &BoundPolicy,
    critics: &BoundCritics,
    roots: &Tensor,
    horizon: usize,
    mode: BoundMode,
    rng: &mut Rng,
) -> Result<Bounds> {
    if models.is_empty() {
        return Err(Error::invalid("at least one posterior sample is required"));
    }
    let s0 = g.constant(roots.clone());
    let samples = models
        .iter()
        .map(|m| estimate_sample(g, m, policy, critics, s0, horizon, rng))
        .collect::<Result<Vec<_>>>()?;
    let task_cands: Vec<NodeId> = samples.iter().map(|s| s.task_sum).collect();
    let nc = critics.safety.len();
    match mode {
        BoundMode::Optimistic => {
            let t = upper_bound_values(g, &task_cands)?;
            let mut costs = Vec::new();
            let mut choices = Vec::new();
            for i in 0..nc {
                let cands: Vec<NodeId> = samples.iter().map(|s| s.cost_sums[i]).collect();
                let b = pessimistic_cost_bound(g, &cands)?;
                costs.push(b.value);
                choices.push(b.choice);
            }
            Ok(Bounds { samples, task: t.value, costs, task_choice: Some(t.choice), cost_choices: Some(choices) })
        }
        BoundMode::Greedy => {
            let task = greedy_mean_values(g, &task_cands)?;
            let costs = (0..nc)
                .map(|i| {
                    let cands: Vec<NodeId> = samples.iter().map(|s| s.cost_sums[i]).collect();
                    greedy_mean_values(g, &cands)
                })
                .collect::<Result<_>>()?;
            Ok(Bounds { samples, task, costs, task_choice: None, cost_choices: None })
        }
    }
}

/// Regression data for a critic: states `s_t` (`t < H`) and their TD(λ)
/// targets, taken from the selected sample of each root, or from every sample
/// when `choice` is `None`.
pub fn critic_targets(
    g: &Graph,
    samples: &[SampleEstimate],
    values: impl Fn(&SampleEstimate) -> &[NodeId],
    choice: Option<&[usize]>,
) -> Result<(Tensor, Tensor)> {
    let mut states = Vec::new();
    let mut targets = Vec::new();
    let mut push = |sample: &SampleEstimate, root: usize| {
        for (t, &v) in values(sample).iter().enumerate() {
            states.push(g.value(sample.trajectory.states[t]).row(root).to_vec());
            targets.push(g.value(v).data()[root]);
        }
    };
    let roots = g.value(samples[0].task_sum).rows();
    match choice {
        Some(c) => {
            for (root, &j) in c.iter().enumerate() {
                push(&samples[j], root);
            }
        }
        None => {
            for s in samples {
                for root in 0..roots {
                    push(s, root);
                }
            }
        }
    }
    Ok((Tensor::from_rows(&states)?, Tensor::column(&targets)))
}
