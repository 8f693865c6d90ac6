//! Squashed Gaussian policy `a = tanh(μ(s) + σ(s) ε)`.
//!
//! The pre-squash mean is kept in `(-MEAN_SCALE, MEAN_SCALE)` so that a saturated
//! policy still receives gradient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_reparam_sample, Graph, NodeId};
use crate::error::Result;
use crate::nn::{BoundMlp, Mlp};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MEAN_SCALE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashedGaussianPolicy {
    pub net: Mlp,
    pub action_dim: usize,
    pub min_stddev: f64,
}

impl SquashedGaussianPolicy {
    /// The output layer starts at zero: pre-squash mean 0 and stddev `softplus(0)`.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], min_stddev: f64, rng: &mut Rng) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self { net: Mlp::new(&sizes, rng, true), action_dim, min_stddev }
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundPolicy {
        BoundPolicy { net: self.net.bind(g, trainable), action_dim: self.action_dim, min_stddev: self.min_stddev }
    }

    /// Pre-squash mean and stddev for a batch of states, without a graph.
    pub fn distribution(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.net.forward_values(s)?;
        let mean = out.slice_cols(0, self.action_dim).map(|x| MEAN_SCALE * (x / MEAN_SCALE).tanh());
        let std = out.slice_cols(self.action_dim, 2 * self.action_dim).map(|x| crate::autodiff::softplus(x) + self.min_stddev);
        Ok((mean, std))
    }

    /// Action for a single state: `tanh(μ)` when deterministic, a sample otherwise.
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let (mean, std) = self.distribution(&Tensor::row_vector(state))?;
        Ok(mean
            .data()
            .iter()
            .zip(std.data())
            .map(|(m, s)| if deterministic { m.tanh() } else { (m + s * rng.normal()).tanh() })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct BoundPolicy {
    pub net: BoundMlp,
    action_dim: usize,
    min_stddev: f64,
}

impl BoundPolicy {
    pub fn mean_and_stddev(&self, g: &mut Graph, s: NodeId) -> Result<(NodeId, NodeId)> {
        let out = self.net.forward(g, s)?;
        let raw_mean = g.slice_cols(out, 0, self.action_dim)?;
        let shrunk = g.scale(raw_mean, 1.0 / MEAN_SCALE);
        let bounded = g.tanh(shrunk);
        let mean = g.scale(bounded, MEAN_SCALE);
        let raw = g.slice_cols(out, self.action_dim, 2 * self.action_dim)?;
        let sp = g.softplus(raw);
        Ok((mean, g.offset(sp, self.min_stddev)))
    }

    /// Reparameterized squashed sample, differentiable in the policy parameters.
    pub fn sample(&self, g: &mut Graph, s: NodeId, rng: &mut Rng) -> Result<NodeId> {
        let (mean, std) = self.mean_and_stddev(g, s)?;
        let pre = gaussian_reparam_sample(g, mean, std, rng)?;
        Ok(g.tanh(pre))
    }

    pub fn mean_action(&self, g: &mut Graph, s: NodeId) -> Result<NodeId> {
        let (mean, _) = self.mean_and_stddev(g, s)?;
        Ok(g.tanh(mean))
    }
}

/// Samples actions for a batch of states, as a graph node.
pub fn sample_action(g: &mut Graph, policy: &BoundPolicy, s: NodeId, rng: &mut Rng) -> Result<NodeId> {
    policy.sample(g, s, rng)
}
