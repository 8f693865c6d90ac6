use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Applies every agent action `k` times.
///
/// Rewards are summed over the sub-steps. Each cost is the maximum over the
/// sub-steps, so a single unsafe sub-step marks the whole macro-step unsafe.
#[derive(Debug, Clone)]
pub struct ActionRepeat<E> {
    inner: E,
    repeat: usize,
}

impl<E: Environment> ActionRepeat<E> {
    pub fn new(inner: E, repeat: usize) -> Result<Self> {
        if repeat == 0 {
            return Err(Error::invalid("action repeat must be at least 1"));
        }
        Ok(Self { inner, repeat })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.inner
    }

    pub fn repeat(&self) -> usize {
        self.repeat
    }
}

impl<E: Environment> Environment for ActionRepeat<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon().div_ceil(self.repeat)
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> StepOutcome {
        let mut out = self.inner.step(action, rng);
        for _ in 1..self.repeat {
            if out.terminal {
                break;
            }
            let next = self.inner.step(action, rng);
            out.reward += next.reward;
            for (c, n) in out.costs.iter_mut().zip(&next.costs) {
                *c = c.max(*n);
            }
            out.observation = next.observation;
            out.terminal = next.terminal;
            out.clipped |= next.clipped;
            out.micro_steps += next.micro_steps;
        }
        out
    }
}
