use serde::{Deserialize, Serialize};

use super::{clip_action, Environment, StepOutcome, TabularCmdp};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Grid moves as `(dx, dy)`: up, right, down, left. `y` grows downwards.
pub const GRID_MOVES: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Text description of a hazard gridworld.
///
/// Map characters: `.` free, `S` start (uniform over all `S`), `G` goal,
/// `H` hazard, `R` goal cell that is also a hazard. Rewards and costs depend on
/// the cell the agent occupies when it acts. Moving into a wall leaves the
/// agent in place; with probability `slip` the chosen move is replaced by a
/// uniformly random one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridLayout {
    pub map: Vec<String>,
    pub slip: f64,
    pub goal_reward: f64,
    /// Reward per step on an `R` cell.
    pub risky_reward: f64,
    pub hazard_cost: f64,
    pub horizon: usize,
    pub threshold: f64,
    /// Inverse temperature of the continuous-to-discrete action map.
    pub action_sharpness: f64,
}

impl Default for GridLayout {
    fn default() -> Self {
        Self {
            map: [
                "HHH.S...", //
                "RRH..GGG", //
                "RRH..GGG", //
                "HHH..GGG", //
                "........", //
                "........", //
                "........", //
                "........",
            ]
            .iter()
            .map(|r| r.to_string())
            .collect(),
            slip: 0.1,
            goal_reward: 1.0,
            risky_reward: 2.0,
            hazard_cost: 1.0,
            horizon: 64,
            threshold: 5.0,
            action_sharpness: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Free,
    Start,
    Goal,
    Hazard,
    RiskyGoal,
}

impl GridLayout {
    fn cells(&self) -> Result<(usize, usize, Vec<Cell>)> {
        let height = self.map.len();
        let width = self.map.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Config("grid map is empty".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        for row in &self.map {
            if row.chars().count() != width {
                return Err(Error::Config(format!("grid row {row:?} has the wrong width")));
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    'S' => Cell::Start,
                    'G' => Cell::Goal,
                    'H' => Cell::Hazard,
                    'R' => Cell::RiskyGoal,
                    other => return Err(Error::Config(format!("unknown grid cell {other:?}"))),
                });
            }
        }
        if !cells.contains(&Cell::Start) {
            return Err(Error::Config("grid map has no start cell".into()));
        }
        Ok((width, height, cells))
    }

    pub fn width(&self) -> usize {
        self.map.first().map_or(0, |r| r.chars().count())
    }

    pub fn height(&self) -> usize {
        self.map.len()
    }

    /// Builds the exact tabular CMDP (single hazard constraint).
    pub fn to_cmdp(&self) -> Result<TabularCmdp> {
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::Config(format!("slip {} outside [0, 1]", self.slip)));
        }
        let (w, h, cells) = self.cells()?;
        let n = w * h;
        let na = GRID_MOVES.len();
        let target = |s: usize, k: usize| -> usize {
            let (x, y) = ((s % w) as i64, (s / w) as i64);
            let (nx, ny) = (x + GRID_MOVES[k].0, y + GRID_MOVES[k].1);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                s
            } else {
                ny as usize * w + nx as usize
            }
        };
        let mut transitions = vec![0.0; n * na * n];
        let mut rewards = vec![0.0; n * na];
        let mut costs = vec![0.0; n * na];
        for s in 0..n {
            let r = match cells[s] {
                Cell::Goal => self.goal_reward,
                Cell::RiskyGoal => self.risky_reward,
                _ => 0.0,
            };
            let c = matches!(cells[s], Cell::Hazard | Cell::RiskyGoal) as u8 as f64 * self.hazard_cost;
            for a in 0..na {
                let row = &mut transitions[(s * na + a) * n..(s * na + a + 1) * n];
                row[target(s, a)] += 1.0 - self.slip;
                for k in 0..na {
                    row[target(s, k)] += self.slip / na as f64;
                }
                rewards[s * na + a] = r;
                costs[s * na + a] = c;
            }
        }
        let starts = cells.iter().filter(|c| **c == Cell::Start).count() as f64;
        let initial = cells.iter().map(|c| if *c == Cell::Start { 1.0 / starts } else { 0.0 }).collect();
        let cmdp = TabularCmdp {
            n_states: n,
            n_actions: na,
            horizon: self.horizon,
            transitions,
            rewards,
            costs: vec![costs],
            initial,
            thresholds: vec![self.threshold],
        };
        cmdp.validate()?;
        Ok(cmdp)
    }

    /// Cell coordinates scaled to `[-1, 1]^2`.
    pub fn observation(&self, s: usize) -> Vec<f64> {
        let (w, h) = (self.width(), self.height());
        let scale = |v: usize, n: usize| if n > 1 { 2.0 * v as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
        vec![scale(s % w, w), scale(s / w, h)]
    }
}

/// Hazard gridworld with continuous observations and actions.
///
/// A continuous action `a ∈ [-1, 1]^2` picks grid move `k` with probability
/// proportional to `exp(sharpness · a·dir_k)`, which keeps the induced
/// dynamics smooth in `a`. The move then goes through the tabular transition
/// kernel, slip included.
#[derive(Debug, Clone)]
pub struct GridNavigation {
    name: String,
    layout: GridLayout,
    cmdp: TabularCmdp,
    state: usize,
    t: usize,
}

impl GridNavigation {
    pub fn new(name: impl Into<String>, layout: GridLayout) -> Result<Self> {
        let cmdp = layout.to_cmdp()?;
        Ok(Self { name: name.into(), layout, cmdp, state: 0, t: 0 })
    }

    pub fn cmdp(&self) -> &TabularCmdp {
        &self.cmdp
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn set_state(&mut self, s: usize) {
        self.state = s;
    }

    /// Distribution over grid moves induced by a continuous action.
    pub fn move_probabilities(&self, action: &[f64]) -> [f64; 4] {
        let logits: Vec<f64> = GRID_MOVES
            .iter()
            .map(|(dx, dy)| self.layout.action_sharpness * (action[0] * *dx as f64 + action[1] * *dy as f64))
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        [e[0] / z, e[1] / z, e[2] / z, e[3] / z]
    }
}

impl Environment for GridNavigation {
    fn name(&self) -> &str {
        &self.name
    }
    fn observation_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.cmdp.horizon
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.t = 0;
        self.state = self.cmdp.sample_initial(rng);
        self.layout.observation(self.state)
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> StepOutcome {
        let (action, clipped) = clip_action(action);
        let k = rng.categorical(&self.move_probabilities(&action));
        let s = self.state;
        let reward = self.cmdp.reward(s, k);
        let cost = self.cmdp.cost(0, s, k);
        self.state = self.cmdp.sample_next(s, k, rng);
        self.t += 1;
        StepOutcome {
            observation: self.layout.observation(self.state),
            reward,
            costs: vec![cost],
            terminal: self.t >= self.cmdp.horizon,
            clipped,
            micro_steps: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_eight_by_eight() {
        let l = GridLayout::default();
        let m = l.to_cmdp().unwrap();
        assert_eq!((l.width(), l.height(), m.n_states, m.n_actions, m.horizon), (8, 8, 64, 4, 64));
    }

    #[test]
    fn hazard_cell_costs_one() {
        let env = GridNavigation::new("grid8", GridLayout::default()).unwrap();
        let risky = 8;
        assert_eq!(env.cmdp().cost(0, risky, 0), 1.0);
        assert_eq!(env.cmdp().reward(risky, 2), 2.0);
        assert_eq!(env.cmdp().cost(0, 4, 0), 0.0);
        assert_eq!(env.cmdp().reward(8 + 5, 0), 1.0);
    }

    #[test]
    fn wall_bump_stays_put() {
        let l = GridLayout { slip: 0.0, ..GridLayout::default() };
        let m = l.to_cmdp().unwrap();
        assert_eq!(m.p(0, 0, 0), 1.0);
        assert_eq!(m.p(0, 1, 1), 1.0);
    }

    #[test]
    fn saturated_action_mostly_picks_its_move() {
        let env = GridNavigation::new("g", GridLayout::default()).unwrap();
        let p = env.move_probabilities(&[1.0, 0.0]);
        assert!(p[1] > 0.98);
        let sym = env.move_probabilities(&[0.0, 0.0]);
        assert!(sym.iter().all(|x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn observations_span_unit_box() {
        let l = GridLayout::default();
        assert_eq!(l.observation(0), vec![-1.0, -1.0]);
        assert_eq!(l.observation(63), vec![1.0, 1.0]);
    }
}
