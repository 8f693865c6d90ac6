//! Episode bookkeeping, replay storage and evaluation metrics.

use std::collections::VecDeque;

use serde::{Deserialize, Deserializer, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<TransitionRecord>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Undiscounted sum of rewards.
pub fn episodic_return(episode: &Episode) -> Result<f64> {
    if episode.is_empty() {
        return Err(Error::invalid("empty episode"));
    }
    Ok(episode.transitions.iter().map(|t| t.reward).sum())
}

/// Undiscounted sum of the costs of constraint `i`.
pub fn episodic_cost_return(episode: &Episode, i: usize) -> Result<f64> {
    if episode.is_empty() {
        return Err(Error::invalid("empty episode"));
    }
    episode
        .transitions
        .iter()
        .map(|t| t.costs.get(i).copied().ok_or_else(|| Error::invalid(format!("no constraint {i}"))))
        .sum()
}

/// FIFO store of whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayBuffer {
    /// `capacity` counts episodes.
    pub fn new(capacity: usize) -> Self {
        Self { episodes: VecDeque::new(), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    /// `batch` contiguous in-episode windows of exactly `len` transitions,
    /// with start positions uniform over every valid start in the buffer.
    pub fn sample_sequences(&self, batch: usize, len: usize, rng: &mut Rng) -> Result<Vec<&[TransitionRecord]>> {
        if len == 0 {
            return Err(Error::invalid("sequence length must be positive"));
        }
        let starts: Vec<usize> = self.episodes.iter().map(|e| (e.len() + 1).saturating_sub(len)).collect();
        let total: usize = starts.iter().sum();
        if total == 0 {
            return Err(Error::invalid(format!("no stored episode holds {len} transitions")));
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut idx = rng.below(total);
            for (ep, &n) in self.episodes.iter().zip(&starts) {
                if idx < n {
                    out.push(&ep.transitions[idx..idx + len]);
                    break;
                }
                idx -= n;
            }
        }
        Ok(out)
    }
}

/// Non-negative per-constraint thresholds `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid(format!("thresholds must be non-negative, got {d:?}")));
        }
        Ok(Self(d))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Thresholds {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Thresholds> for Vec<f64> {
    fn from(t: Thresholds) -> Self {
        t.0
    }
}

/// `Σ c_t / T` over training interactions.
pub fn cost_regret(training_costs: &[f64], steps: u64) -> Result<f64> {
    if steps == 0 {
        return Err(Error::invalid("cost regret needs T > 0"));
    }
    Ok(training_costs.iter().sum::<f64>() / steps as f64)
}

/// Running sum of training-time costs (first constraint) and primitive steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCosts {
    pub cost_sum: f64,
    pub steps: u64,
}

impl TrainingCosts {
    pub fn record(&mut self, cost: f64, micro_steps: usize) {
        self.cost_sum += cost;
        self.steps += micro_steps as u64;
    }

    pub fn regret(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.cost_sum / self.steps as f64
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self { cost_sum: self.cost_sum + other.cost_sum, steps: self.steps + other.steps }
    }
}

/// The evaluation triple plus the training step count, serialized as
/// `{"J", "Jc", "rho_c", "steps"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Jc", deserialize_with = "scalar_or_vec")]
    pub jc: Vec<f64>,
    pub rho_c: f64,
    pub steps: u64,
}

fn scalar_or_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Jc")]
    pub jc: Vec<f64>,
    pub rho_c: f64,
}

/// Normalizes against characteristic metrics of an unconstrained reference agent:
/// `J/J_ref`, `max(0, Jc - d) / max(1e-6, Jc_ref - d)` and `rho_c/rho_ref`.
pub fn normalize_metrics(
    raw: &MetricsReport,
    characteristic: &MetricsReport,
    d: &Thresholds,
) -> Result<NormalizedMetrics> {
    if characteristic.j == 0.0 || characteristic.rho_c == 0.0 {
        return Err(Error::invalid("characteristic J and rho_c must be non-zero"));
    }
    if raw.jc.len() != d.len() || characteristic.jc.len() != d.len() {
        return Err(Error::Shape(format!(
            "{} and {} cost returns for {} thresholds",
            raw.jc.len(),
            characteristic.jc.len(),
            d.len()
        )));
    }
    let jc = raw
        .jc
        .iter()
        .zip(&characteristic.jc)
        .zip(d.values())
        .map(|((jc, jc_ref), d)| (jc - d).max(0.0) / (jc_ref - d).max(1e-6))
        .collect();
    Ok(NormalizedMetrics { j: raw.j / characteristic.j, jc, rho_c: raw.rho_c / characteristic.rho_c })
}

/// Anything that maps observations to actions.
pub trait Policy {
    fn act(&mut self, observation: &[f64], rng: &mut Rng) -> Vec<f64>;
}

impl<F: FnMut(&[f64], &mut Rng) -> Vec<f64>> Policy for F {
    fn act(&mut self, observation: &[f64], rng: &mut Rng) -> Vec<f64> {
        self(observation, rng)
    }
}

/// Rolls out one episode of at most `max_steps` decisions.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    max_steps: usize,
    rng: &mut Rng,
) -> (Episode, usize) {
    let mut obs = env.reset(rng);
    let mut episode = Episode::default();
    let mut micro = 0;
    for _ in 0..max_steps {
        let action = policy.act(&obs, rng);
        let out = env.step(&action, rng);
        micro += out.micro_steps;
        let terminal = out.terminal;
        episode.transitions.push(TransitionRecord {
            state: obs,
            action,
            reward: out.reward,
            costs: out.costs,
            next_state: out.observation.clone(),
            terminal,
        });
        obs = out.observation;
        if terminal {
            break;
        }
    }
    (episode, micro)
}

/// Averages undiscounted returns and cost returns over `episodes` rollouts of
/// at most `max_steps` decisions each.
///
/// Evaluation interactions never touch `training`; its regret and step count
/// are copied into the report as they stand.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    episodes: usize,
    max_steps: usize,
    training: &TrainingCosts,
    rng: &mut Rng,
) -> Result<MetricsReport> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let nc = env.num_constraints();
    let mut j = 0.0;
    let mut jc = vec![0.0; nc];
    for _ in 0..episodes {
        let (ep, _) = run_episode(env, policy, max_steps, rng);
        j += episodic_return(&ep)?;
        for (i, acc) in jc.iter_mut().enumerate() {
            *acc += episodic_cost_return(&ep, i)?;
        }
    }
    let e = episodes as f64;
    Ok(MetricsReport {
        j: j / e,
        jc: jc.into_iter().map(|x| x / e).collect(),
        rho_c: training.regret(),
        steps: training.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(rewards: &[f64], costs: &[f64]) -> Episode {
        Episode {
            transitions: rewards
                .iter()
                .zip(costs)
                .map(|(&r, &c)| TransitionRecord {
                    state: vec![0.0],
                    action: vec![0.0],
                    reward: r,
                    costs: vec![c],
                    next_state: vec![0.0],
                    terminal: false,
                })
                .collect(),
        }
    }

    #[test]
    fn returns_are_undiscounted_sums() {
        assert_eq!(episodic_return(&ep(&[0.0; 4], &[0.0; 4])).unwrap(), 0.0);
        assert_eq!(episodic_return(&ep(&[1.0, 2.0, 3.0], &[0.0; 3])).unwrap(), 6.0);
        let costs = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(episodic_cost_return(&ep(&[0.0; 9], &costs), 0).unwrap(), 7.0);
        assert!(episodic_return(&Episode::default()).is_err());
    }

    #[test]
    fn cost_regret_edges() {
        assert_eq!(cost_regret(&[0.0; 10], 10).unwrap(), 0.0);
        assert_eq!(cost_regret(&[1.0; 10], 10).unwrap(), 1.0);
        assert!(cost_regret(&[], 0).is_err());
    }

    #[test]
    fn normalization_examples() {
        let d = Thresholds::new(vec![25.0]).unwrap();
        let reference = MetricsReport { j: 10.0, jc: vec![35.0], rho_c: 0.05, steps: 1 };
        let raw = MetricsReport { j: 10.0, jc: vec![26.0], rho_c: 0.025, steps: 1 };
        let n = normalize_metrics(&raw, &reference, &d).unwrap();
        assert_eq!(n.j, 1.0);
        assert!((n.jc[0] - 0.1).abs() < 1e-12);
        assert_eq!(n.rho_c, 0.5);
        let safe = MetricsReport { jc: vec![20.0], ..raw };
        assert_eq!(normalize_metrics(&safe, &reference, &d).unwrap().jc[0], 0.0);
        let zero = MetricsReport { j: 0.0, ..reference };
        assert!(normalize_metrics(&safe, &zero, &d).is_err());
    }

    #[test]
    fn report_serializes_with_fixed_keys() {
        let r = MetricsReport { j: 1.5, jc: vec![2.0], rho_c: 0.1, steps: 64 };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["J", "Jc", "rho_c", "steps"]);
        let scalar: MetricsReport =
            serde_json::from_str(r#"{"J": 1.0, "Jc": 3.0, "rho_c": 0.5, "steps": 2}"#).unwrap();
        assert_eq!(scalar.jc, vec![3.0]);
    }

    #[test]
    fn replay_windows_stay_inside_episodes() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(ep(&[0.0; 3], &[0.0; 3]));
        buf.push(ep(&[1.0; 8], &[0.0; 8]));
        let mut rng = Rng::new(2);
        for w in buf.sample_sequences(50, 5, &mut rng).unwrap() {
            assert_eq!(w.len(), 5);
            assert!(w.iter().all(|t| t.reward == 1.0));
        }
        assert!(buf.sample_sequences(1, 9, &mut rng).is_err());
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2);
        for r in 0..3 {
            buf.push(ep(&[r as f64], &[0.0]));
        }
        let first: Vec<f64> = buf.episodes().map(|e| e.transitions[0].reward).collect();
        assert_eq!(first, vec![1.0, 2.0]);
    }

    #[test]
    fn thresholds_reject_negative() {
        assert!(Thresholds::new(vec![-1.0]).is_err());
        assert!(serde_json::from_str::<Thresholds>("[-2.0]").is_err());
    }
}
