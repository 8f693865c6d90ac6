//! Differentiable imagined trajectories from the world model.

use crate::autodiff::{Graph, NodeId};
use crate::cmdp::TransitionRecord;
use crate::error::{Error, Result};
use crate::policy::BoundPolicy;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::world_model::BoundModel;

/// One batch of imagined sequences. Every node holds one row per root.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `s_0 .. s_H`, each `[roots, state_dim]`.
    pub states: Vec<NodeId>,
    /// `a_0 .. a_{H-1}`.
    pub actions: Vec<NodeId>,
    /// Reward means `[roots, 1]`.
    pub rewards: Vec<NodeId>,
    /// Cost probabilities `[roots, C]`.
    pub costs: Vec<NodeId>,
    /// Set when a non-finite state cut the sequence short.
    pub truncated: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }
}

/// Rolls the policy through the model for `horizon` steps from `s0`.
///
/// The policy sees `stop_gradient(s_t)`, so an action receives gradient only
/// through the states and values that follow it. A non-finite next state ends
/// the sequence early with `truncated` set.
pub fn generate_sequence(
    g: &mut Graph,
    model: &BoundModel,
    policy: &BoundPolicy,
    s0: NodeId,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    let mut traj = Trajectory { states: vec![s0], actions: vec![], rewards: vec![], costs: vec![], truncated: false };
    let mut s = s0;
    for _ in 0..horizon {
        let detached = g.stop_gradient(s);
        let a = policy.sample(g, detached, rng)?;
        let (next, r, c) = model.step(g, s, a, rng)?;
        if !g.value(next).all_finite() || !g.value(r).all_finite() || !g.value(c).all_finite() {
            traj.truncated = true;
            log::warn!("imagined rollout truncated after {} steps", traj.rewards.len());
            break;
        }
        traj.actions.push(a);
        traj.rewards.push(r);
        traj.costs.push(c);
        traj.states.push(next);
        s = next;
    }
    Ok(traj)
}

/// Stacks every state of the sampled replay sequences as a rollout root.
pub fn initial_states_from_batch(seqs: &[&[TransitionRecord]]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = seqs.iter().flat_map(|s| s.iter().map(|t| t.state.clone())).collect();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("replay state".into()));
    }
    Tensor::from_rows(&rows)
}

/// Simulated environment interactions of one update step.
pub fn simulated_interactions(roots: usize, horizon: usize, samples: usize) -> u64 {
    roots as u64 * horizon as u64 * samples as u64
}
