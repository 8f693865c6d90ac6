use serde::{Deserialize, Serialize};

use super::{clip_action, Environment, StepOutcome};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointHazardConfig {
    pub dt: f64,
    pub noise_scale: f64,
    pub max_speed: f64,
    /// Half-width of the square arena centred at the origin.
    pub arena: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub goal_bonus: f64,
    /// Hazard circles as `[x, y, radius]`.
    pub hazards: Vec<[f64; 3]>,
    pub horizon: usize,
    pub threshold: f64,
}

impl Default for PointHazardConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            noise_scale: 0.01,
            max_speed: 1.0,
            arena: 1.5,
            start: [-1.0, -1.0],
            goal: [1.0, 1.0],
            goal_radius: 0.2,
            goal_bonus: 1.0,
            hazards: vec![[0.0, 0.0, 0.45], [0.8, -0.4, 0.25], [-0.4, 0.8, 0.25]],
            horizon: 200,
            threshold: 5.0,
        }
    }
}

/// Point mass in the plane driven by accelerations, with circular hazards.
///
/// Observation: `[x, y, vx, vy, gx - x, gy - y]`. Reward is the decrease of the
/// distance to the goal plus a bonus on arrival, after which the goal moves to
/// a fresh random location. The cost is 1 while inside any hazard circle.
#[derive(Debug, Clone)]
pub struct PointHazard2D {
    cfg: PointHazardConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PointHazard2D {
    pub fn new(cfg: PointHazardConfig) -> Self {
        let (pos, goal) = (cfg.start, cfg.goal);
        Self { cfg, pos, vel: [0.0; 2], goal, t: 0 }
    }

    pub fn config(&self) -> &PointHazardConfig {
        &self.cfg
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn set_kinematics(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    pub fn in_hazard(&self, p: [f64; 2]) -> bool {
        self.cfg.hazards.iter().any(|h| (p[0] - h[0]).hypot(p[1] - h[1]) <= h[2])
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
        ]
    }

    fn goal_distance(&self) -> f64 {
        (self.goal[0] - self.pos[0]).hypot(self.goal[1] - self.pos[1])
    }

    fn respawn_goal(&mut self, rng: &mut Rng) {
        let lim = self.cfg.arena - self.cfg.goal_radius;
        for _ in 0..100 {
            let g = [rng.uniform_range(-lim, lim), rng.uniform_range(-lim, lim)];
            if !self.in_hazard(g) && (g[0] - self.pos[0]).hypot(g[1] - self.pos[1]) > 2.0 * self.cfg.goal_radius {
                self.goal = g;
                return;
            }
        }
    }
}

impl Environment for PointHazard2D {
    fn name(&self) -> &str {
        "point"
    }
    fn observation_dim(&self) -> usize {
        6
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.pos = self.cfg.start;
        self.vel = [0.0; 2];
        self.goal = self.cfg.goal;
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> StepOutcome {
        let (a, clipped) = clip_action(action);
        let cost = self.in_hazard(self.pos) as u8 as f64;
        let before = self.goal_distance();
        let dt = self.cfg.dt;
        let mut pos = [self.pos[0] + dt * self.vel[0], self.pos[1] + dt * self.vel[1]];
        let mut vel = self.vel;
        for i in 0..2 {
            let noise = if self.cfg.noise_scale > 0.0 { self.cfg.noise_scale * rng.normal() } else { 0.0 };
            vel[i] = (vel[i] + dt * a[i] + noise).clamp(-self.cfg.max_speed, self.cfg.max_speed);
            if pos[i].abs() > self.cfg.arena {
                pos[i] = pos[i].clamp(-self.cfg.arena, self.cfg.arena);
                vel[i] = 0.0;
            }
        }
        self.pos = pos;
        self.vel = vel;
        let mut reward = before - self.goal_distance();
        if self.goal_distance() <= self.cfg.goal_radius {
            reward += self.cfg.goal_bonus;
            self.respawn_goal(rng);
        }
        self.t += 1;
        StepOutcome {
            observation: self.observation(),
            reward,
            costs: vec![cost],
            terminal: self.t >= self.cfg.horizon,
            clipped,
            micro_steps: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PointHazard2D {
        PointHazard2D::new(PointHazardConfig { noise_scale: 0.0, ..Default::default() })
    }

    #[test]
    fn zero_action_advances_by_velocity_only() {
        let mut env = quiet();
        env.set_kinematics([-1.0, -1.0], [0.3, -0.2]);
        env.step(&[0.0, 0.0], &mut Rng::new(0));
        let p = env.position();
        assert!((p[0] - (-1.0 + 0.03)).abs() < 1e-15 && (p[1] - (-1.0 - 0.02)).abs() < 1e-15);
        assert_eq!(env.velocity(), [0.3, -0.2]);
    }

    #[test]
    fn hazard_centre_costs_one() {
        let mut env = quiet();
        env.set_kinematics([0.0, 0.0], [0.0, 0.0]);
        let out = env.step(&[0.0, 0.0], &mut Rng::new(0));
        assert_eq!(out.costs, vec![1.0]);
    }

    #[test]
    fn noiseless_unclipped_dynamics_reverse() {
        let mut env = quiet();
        let (p0, v0) = ([-0.7, 0.2], [0.1, 0.05]);
        env.set_kinematics(p0, v0);
        let actions = [[0.5, -0.3], [-0.2, 0.9], [1.0, 1.0]];
        for a in &actions {
            env.step(a, &mut Rng::new(0));
        }
        let (mut p, mut v) = (env.position(), env.velocity());
        for a in actions.iter().rev() {
            let pv = [v[0] - 0.1 * a[0], v[1] - 0.1 * a[1]];
            p = [p[0] - 0.1 * pv[0], p[1] - 0.1 * pv[1]];
            v = pv;
        }
        for i in 0..2 {
            assert!((p[i] - p0[i]).abs() < 1e-12 && (v[i] - v0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_action_is_clipped_and_flagged() {
        let mut env = quiet();
        env.reset(&mut Rng::new(0));
        let out = env.step(&[3.0, 0.0], &mut Rng::new(0));
        assert!(out.clipped);
        assert!((env.velocity()[0] - 0.1).abs() < 1e-15);
    }
}
