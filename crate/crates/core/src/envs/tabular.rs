use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Finite-horizon CMDP with explicit tables.
///
/// `transitions` is laid out `[s][a][s']`, `rewards` and each cost table `[s][a]`.
/// Rewards and costs are collected for every `t < horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Threshold per constraint; `null` in JSON means unconstrained.
    #[serde(with = "thresholds_serde")]
    pub thresholds: Vec<f64>,
}

mod thresholds_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = d.iter().map(|x| x.is_finite().then_some(*x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

impl TabularCmdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 || self.horizon == 0 {
            return Err(Error::invalid("empty state space, action space or horizon"));
        }
        if self.transitions.len() != s * a * s || self.rewards.len() != s * a {
            return Err(Error::Shape(format!(
                "tables for {s} states and {a} actions have {} transition and {} reward entries",
                self.transitions.len(),
                self.rewards.len()
            )));
        }
        if self.costs.len() != self.thresholds.len() || self.costs.iter().any(|c| c.len() != s * a) {
            return Err(Error::Shape("one cost table of size S*A per threshold required".into()));
        }
        if self.initial.len() != s || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("initial distribution must have S entries summing to 1"));
        }
        for sa in 0..s * a {
            let row = &self.transitions[sa * s..(sa + 1) * s];
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "transition row (s={}, a={}) is not a distribution",
                    sa / a,
                    sa % a
                )));
            }
        }
        if self.thresholds.iter().any(|d| *d < 0.0 || d.is_nan()) {
            return Err(Error::invalid("thresholds must be non-negative"));
        }
        Ok(())
    }

    pub fn num_constraints(&self) -> usize {
        self.costs.len()
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn cost(&self, i: usize, s: usize, a: usize) -> f64 {
        self.costs[i][s * self.n_actions + a]
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.initial)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        rng.categorical(self.next_distribution(s, a))
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Self {
        self.thresholds = thresholds;
        self
    }
}
