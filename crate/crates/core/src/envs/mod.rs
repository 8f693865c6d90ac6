//! Desk-scale constrained environments.
//!
//! * [`TabularCmdp`] is an explicit finite-horizon CMDP, solvable exactly by
//!   [`crate::lp`].
//! * [`GridNavigation`] exposes a hazard gridworld built as a [`TabularCmdp`]
//!   through continuous observations and actions.
//! * [`PointHazard2D`] is a continuous point-mass navigation task with
//!   circular hazards.
//! * [`ActionRepeat`] repeats each agent action for a fixed number of sub-steps.

mod grid;
mod point;
mod repeat;
mod tabular;

pub use grid::{GridLayout, GridNavigation, GRID_MOVES};
pub use point::{PointHazard2D, PointHazardConfig};
pub use repeat::ActionRepeat;
pub use tabular::TabularCmdp;

use crate::rng::Rng;

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// One entry per constraint.
    pub costs: Vec<f64>,
    /// The episode has ended (fixed-horizon truncation).
    pub terminal: bool,
    /// The submitted action had to be clipped into `[-1, 1]`.
    pub clipped: bool,
    /// Primitive environment steps consumed by this call.
    pub micro_steps: usize,
}

/// A fully observed episodic environment with continuous actions in `[-1, 1]^m`.
pub trait Environment {
    fn name(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Decision steps per episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> StepOutcome;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn num_constraints(&self) -> usize {
        (**self).num_constraints()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> StepOutcome {
        (**self).step(action, rng)
    }
}

/// Clips `action` into `[-1, 1]`, reporting whether anything changed.
pub fn clip_action(action: &[f64]) -> (Vec<f64>, bool) {
    let mut clipped = false;
    let out = action
        .iter()
        .map(|&a| {
            let c = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
            clipped |= c != a;
            c
        })
        .collect();
    (out, clipped)
}
