//! Augmented Lagrangian multipliers, the penalty Ψ and the policy loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Multipliers `λ^i ≥ 0` and the non-decreasing penalty `μ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: Vec<f64>,
    pub mu: f64,
    /// `μ_{k+1} = μ_k · mu_growth`, with `mu_growth = 1 + penalty power factor`.
    pub mu_growth: f64,
}

impl LagrangeState {
    pub fn new(num_constraints: usize, initial_lagrangian: f64, initial_penalty: f64, penalty_power_factor: f64) -> Result<Self> {
        if !(initial_penalty > 0.0) || initial_lagrangian < 0.0 || penalty_power_factor < 0.0 {
            return Err(Error::Config(format!(
                "need μ0 > 0, λ0 ≥ 0 and a non-negative power factor, got {initial_penalty}, {initial_lagrangian}, {penalty_power_factor}"
            )));
        }
        Ok(Self { lambda: vec![initial_lagrangian; num_constraints], mu: initial_penalty, mu_growth: 1.0 + penalty_power_factor })
    }

    /// `λ^i ← max(0, λ^i + μ (J^i - d^i))`, then `μ ← μ · growth`.
    pub fn lambda_update(&self, jc: &[f64], d: &[f64]) -> Result<Self> {
        if jc.len() != self.lambda.len() || d.len() != self.lambda.len() {
            return Err(Error::Shape(format!(
                "{} multipliers, {} estimates, {} thresholds",
                self.lambda.len(),
                jc.len(),
                d.len()
            )));
        }
        let lambda = self
            .lambda
            .iter()
            .zip(jc.iter().zip(d))
            .map(|(l, (j, d))| if d.is_finite() { (l + self.mu * (j - d)).max(0.0) } else { 0.0 })
            .collect();
        Ok(Self { lambda, mu: self.mu * self.mu_growth, mu_growth: self.mu_growth })
    }
}

fn check(lambda: f64, mu: f64) -> Result<()> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("penalty μ must be positive, got {mu}")));
    }
    if lambda < 0.0 {
        return Err(Error::invalid(format!("multiplier λ must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// Inner objective of the proximal relaxation for one constraint,
/// `-λ g + (λ - λ_k)² / (2μ)` with `g = J - d`. [`LagrangeState::lambda_update`]
/// is its minimizer over `λ ≥ 0` and `-min` equals [`penalty_psi_value`].
pub fn proximal_objective(lambda: f64, lambda_k: f64, mu: f64, violation: f64) -> f64 {
    -lambda * violation + (lambda - lambda_k).powi(2) / (2.0 * mu)
}

/// `Ψ(J_c; λ, μ)` as a plain number.
pub fn penalty_psi_value(jc: f64, d: f64, lambda: f64, mu: f64) -> Result<f64> {
    check(lambda, mu)?;
    let g = jc - d;
    Ok(if lambda + mu * g >= 0.0 { lambda * g + 0.5 * mu * g * g } else { -lambda * lambda / (2.0 * mu) })
}

/// `Ψ` as a graph node. The inactive branch is a constant.
pub fn penalty_psi(g: &mut Graph, jc: NodeId, d: f64, lambda: f64, mu: f64) -> Result<NodeId> {
    check(lambda, mu)?;
    let v = g.value(jc).item() - d;
    if lambda + mu * v >= 0.0 {
        let diff = g.offset(jc, -d);
        let lin = g.scale(diff, lambda);
        let sq = g.square(diff);
        let quad = g.scale(sq, 0.5 * mu);
        g.add(lin, quad)
    } else {
        Ok(g.scalar(-lambda * lambda / (2.0 * mu)))
    }
}

/// Policy loss parts. `loss = -task + Σ_i psi_i`.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: NodeId,
    pub task: NodeId,
    pub psi: Vec<NodeId>,
}

/// Builds `-task_value + Σ Ψ^i(J_c^i)`. `task_value` and each `jc_est[i]` are
/// single-element nodes. Constraints with an infinite threshold, and every
/// constraint when `penalize` is false, contribute nothing.
pub fn policy_loss(
    g: &mut Graph,
    task_value: NodeId,
    jc_est: &[NodeId],
    d: &[f64],
    state: &LagrangeState,
    penalize: bool,
) -> Result<PolicyLoss> {
    if jc_est.len() != d.len() || d.len() != state.lambda.len() {
        return Err(Error::Shape(format!("{} estimates for {} thresholds", jc_est.len(), d.len())));
    }
    let mut loss = g.neg(task_value);
    let mut psi = Vec::new();
    if penalize {
        for ((&j, &di), &l) in jc_est.iter().zip(d).zip(&state.lambda) {
            if di.is_finite() {
                let p = penalty_psi(g, j, di, l, state.mu)?;
                loss = g.add(loss, p)?;
                psi.push(p);
            }
        }
    }
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFinite(format!("policy loss {}", g.value(loss).item())));
    }
    Ok(PolicyLoss { loss, task: task_value, psi })
}
