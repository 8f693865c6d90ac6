//! Exact solvers for finite-horizon tabular CMDPs.
//!
//! The primal route writes the problem as a linear program over time-indexed
//! occupancy measures `μ[t, s, a]` and solves it with [`simplex`]. The dual
//! route handles a single constraint on large tables by searching the
//! Lagrange multiplier with exact dynamic programming and mixing the two
//! deterministic policies that bracket the threshold.

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::envs::TabularCmdp;
use crate::error::{Error, Result};
pub use simplex::{LinearProgram, LpSolution};

/// Time-dependent Markov policy `π(a | t, s)` stored as `[t][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(horizon: usize, n_states: usize, n_actions: usize) -> Self {
        Self { horizon, n_states, n_actions, probs: vec![1.0 / n_actions as f64; horizon * n_states * n_actions] }
    }

    /// `actions[t * n_states + s]` is the action taken at `(t, s)`.
    pub fn deterministic(horizon: usize, n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != horizon * n_states || actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::invalid("deterministic policy table has the wrong size or action range"));
        }
        let mut probs = vec![0.0; horizon * n_states * n_actions];
        for (i, &a) in actions.iter().enumerate() {
            probs[i * n_actions + a] = 1.0;
        }
        Ok(Self { horizon, n_states, n_actions, probs })
    }

    /// Reads off `μ(a | t, s) / Σ_a μ`, uniform where the state is unreachable.
    pub fn from_occupancy(cmdp: &TabularCmdp, occupancy: &[f64]) -> Self {
        let (na, ns) = (cmdp.n_actions, cmdp.n_states);
        let mut probs = occupancy.to_vec();
        for row in probs.chunks_mut(na) {
            let z: f64 = row.iter().map(|p| p.max(0.0)).sum();
            for p in row.iter_mut() {
                *p = if z > 1e-15 { p.max(0.0) / z } else { 1.0 / na as f64 };
            }
        }
        Self { horizon: cmdp.horizon, n_states: ns, n_actions: na, probs }
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[(t * self.n_states + s) * self.n_actions + a]
    }

    pub fn distribution(&self, t: usize, s: usize) -> &[f64] {
        let i = (t * self.n_states + s) * self.n_actions;
        &self.probs[i..i + self.n_actions]
    }
}

/// Exact value of a policy, with its occupancy measure `[t][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub j: f64,
    pub jc: Vec<f64>,
    pub occupancy: Vec<f64>,
}

/// Solution of the constrained problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpSolution {
    /// Optimal constrained return `J*`.
    pub value: f64,
    /// `J_c^i` of the optimal policy.
    pub constraint_values: Vec<f64>,
    /// Occupancy measure `[t][s][a]`.
    pub occupancy: Vec<f64>,
    pub policy: TabularPolicy,
    pub method: SolveMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Simplex,
    Dual,
}

/// Which solver [`solve_cmdp`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Simplex for small tables, dual search otherwise.
    #[default]
    Auto,
    Simplex,
    Dual,
}

/// Largest occupancy table the automatic choice sends to the dense simplex.
pub const SIMPLEX_AUTO_LIMIT: usize = 1500;

fn check_policy(cmdp: &TabularCmdp, pi: &TabularPolicy) -> Result<()> {
    if pi.horizon != cmdp.horizon || pi.n_states != cmdp.n_states || pi.n_actions != cmdp.n_actions {
        return Err(Error::Shape(format!(
            "policy is {}x{}x{} but the CMDP is {}x{}x{}",
            pi.horizon, pi.n_states, pi.n_actions, cmdp.horizon, cmdp.n_states, cmdp.n_actions
        )));
    }
    Ok(())
}

/// Evaluates a policy by propagating the state distribution forwards.
pub fn exact_policy_eval(cmdp: &TabularCmdp, pi: &TabularPolicy) -> Result<PolicyValue> {
    check_policy(cmdp, pi)?;
    let (ns, na) = (cmdp.n_states, cmdp.n_actions);
    let mut occupancy = vec![0.0; cmdp.horizon * ns * na];
    let mut dist = cmdp.initial.clone();
    let mut j = 0.0;
    let mut jc = vec![0.0; cmdp.num_constraints()];
    for t in 0..cmdp.horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let m = dist[s] * pi.prob(t, s, a);
                if m == 0.0 {
                    continue;
                }
                occupancy[(t * ns + s) * na + a] = m;
                j += m * cmdp.reward(s, a);
                for (i, c) in jc.iter_mut().enumerate() {
                    *c += m * cmdp.cost(i, s, a);
                }
                for (n, p) in next.iter_mut().zip(cmdp.next_distribution(s, a)) {
                    *n += m * p;
                }
            }
        }
        dist = next;
    }
    Ok(PolicyValue { j, jc, occupancy })
}

/// Backward induction for `r - Σ_i λ_i c_i`; ties go to the lowest action.
/// Returns the greedy deterministic policy and its penalized value.
pub fn best_response(cmdp: &TabularCmdp, lambdas: &[f64]) -> Result<(TabularPolicy, f64)> {
    if lambdas.len() != cmdp.num_constraints() {
        return Err(Error::invalid(format!("{} multipliers for {} constraints", lambdas.len(), cmdp.num_constraints())));
    }
    let (ns, na, h) = (cmdp.n_states, cmdp.n_actions, cmdp.horizon);
    let mut v = vec![0.0; ns];
    let mut actions = vec![0; h * ns];
    for t in (0..h).rev() {
        let mut nv = vec![0.0; ns];
        for s in 0..ns {
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..na {
                let mut q = cmdp.reward(s, a);
                for (i, l) in lambdas.iter().enumerate() {
                    if *l != 0.0 {
                        q -= l * cmdp.cost(i, s, a);
                    }
                }
                q += cmdp.next_distribution(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
                if q > best.0 {
                    best = (q, a);
                }
            }
            nv[s] = best.0;
            actions[t * ns + s] = best.1;
        }
        v = nv;
    }
    let value = v.iter().zip(&cmdp.initial).map(|(a, b)| a * b).sum();
    Ok((TabularPolicy::deterministic(h, ns, na, &actions)?, value))
}

fn idx(ns: usize, na: usize, t: usize, s: usize, a: usize) -> usize {
    (t * ns + s) * na + a
}

/// Solves the occupancy-measure linear program with the dense simplex.
pub fn solve_cmdp_lp(cmdp: &TabularCmdp) -> Result<CmdpSolution> {
    cmdp.validate()?;
    let (ns, na, h) = (cmdp.n_states, cmdp.n_actions, cmdp.horizon);
    let nv = h * ns * na;
    let mut objective = vec![0.0; nv];
    for t in 0..h {
        for s in 0..ns {
            for a in 0..na {
                objective[idx(ns, na, t, s, a)] = cmdp.reward(s, a);
            }
        }
    }
    let mut lp = LinearProgram::new(objective);
    for s in 0..ns {
        let mut row = vec![0.0; nv];
        for a in 0..na {
            row[idx(ns, na, 0, s, a)] = 1.0;
        }
        lp.add_equality(row, cmdp.initial[s])?;
    }
    // Flow conservation: Σ_a μ[t+1, s', a] = Σ_{s,a} μ[t, s, a] P(s' | s, a).
    for t in 0..h.saturating_sub(1) {
        for sp in 0..ns {
            let mut row = vec![0.0; nv];
            for a in 0..na {
                row[idx(ns, na, t + 1, sp, a)] = 1.0;
            }
            for s in 0..ns {
                for a in 0..na {
                    row[idx(ns, na, t, s, a)] -= cmdp.p(s, a, sp);
                }
            }
            lp.add_equality(row, 0.0)?;
        }
    }
    for (i, d) in cmdp.thresholds.iter().enumerate() {
        if d.is_finite() {
            let mut row = vec![0.0; nv];
            for t in 0..h {
                for s in 0..ns {
                    for a in 0..na {
                        row[idx(ns, na, t, s, a)] = cmdp.cost(i, s, a);
                    }
                }
            }
            lp.add_le(row, *d)?;
        }
    }
    let sol = lp.solve()?;
    let policy = TabularPolicy::from_occupancy(cmdp, &sol.x);
    let eval = exact_policy_eval(cmdp, &policy)?;
    Ok(CmdpSolution {
        value: sol.objective,
        constraint_values: eval.jc,
        occupancy: sol.x,
        policy,
        method: SolveMethod::Simplex,
    })
}

fn mixture(cmdp: &TabularCmdp, a: &PolicyValue, b: &PolicyValue, w: f64) -> Result<CmdpSolution> {
    let occupancy: Vec<f64> = a.occupancy.iter().zip(&b.occupancy).map(|(x, y)| w * x + (1.0 - w) * y).collect();
    let policy = TabularPolicy::from_occupancy(cmdp, &occupancy);
    Ok(CmdpSolution {
        value: w * a.j + (1.0 - w) * b.j,
        constraint_values: a.jc.iter().zip(&b.jc).map(|(x, y)| w * x + (1.0 - w) * y).collect(),
        occupancy,
        policy,
        method: SolveMethod::Dual,
    })
}

/// Lagrangian dual search for CMDPs with at most one finite threshold.
///
/// The dual function `g(λ) = max_π J(π) - λ (J_c(π) - d)` is convex and
/// piecewise linear in `λ`, with one line per deterministic policy. The search
/// keeps an infeasible and a feasible supporting line, evaluates `g` where
/// they cross, and stops once no policy lies above the crossing. The optimum
/// then mixes the two bracketing policies so the constraint holds with
/// equality.
pub fn solve_cmdp_dual(cmdp: &TabularCmdp) -> Result<CmdpSolution> {
    cmdp.validate()?;
    let m = cmdp.num_constraints();
    let finite: Vec<usize> = (0..m).filter(|&i| cmdp.thresholds[i].is_finite()).collect();
    let unconstrained = |pi: TabularPolicy| -> Result<CmdpSolution> {
        let v = exact_policy_eval(cmdp, &pi)?;
        Ok(CmdpSolution { value: v.j, constraint_values: v.jc, occupancy: v.occupancy, policy: pi, method: SolveMethod::Dual })
    };
    let zero = vec![0.0; m];
    if finite.is_empty() {
        return unconstrained(best_response(cmdp, &zero)?.0);
    }
    if finite.len() > 1 {
        return Err(Error::invalid("the dual search handles one finite threshold; use the simplex"));
    }
    let ci = finite[0];
    let d = cmdp.thresholds[ci];
    let lam = |l: f64| {
        let mut v = zero.clone();
        v[ci] = l;
        v
    };
    let eval_at = |l: f64| -> Result<PolicyValue> { exact_policy_eval(cmdp, &best_response(cmdp, &lam(l))?.0) };
    let tol = 1e-10 * (1.0 + d.abs());

    let mut lo = eval_at(0.0)?;
    if lo.jc[ci] <= d + tol {
        return unconstrained(best_response(cmdp, &zero)?.0);
    }
    let mut hi = None;
    let mut l = 1.0;
    while l < 1e12 {
        let v = eval_at(l)?;
        if v.jc[ci] <= d + tol {
            hi = Some(v);
            break;
        }
        lo = v;
        l *= 4.0;
    }
    let mut hi = match hi {
        Some(v) => v,
        None => {
            // Pure cost minimization decides feasibility.
            let mut w = vec![0.0; m];
            w[ci] = 1.0;
            let mut only_cost = cmdp.clone();
            only_cost.rewards.iter_mut().for_each(|r| *r = 0.0);
            let v = exact_policy_eval(cmdp, &best_response(&only_cost, &w)?.0)?;
            if v.jc[ci] > d + tol {
                return Err(Error::Infeasible(format!("minimum achievable cost {} exceeds threshold {d}", v.jc[ci])));
            }
            v
        }
    };
    for _ in 0..10_000 {
        let (jl, cl) = (lo.j, lo.jc[ci]);
        let (jh, ch) = (hi.j, hi.jc[ci]);
        if (cl - ch).abs() <= tol {
            break;
        }
        let lm = ((jl - jh) / (cl - ch)).max(0.0);
        let line = jl - lm * (cl - d);
        let (pi, g_pen) = best_response(cmdp, &lam(lm))?;
        let g = g_pen + lm * d;
        if g <= line + 1e-10 * (1.0 + line.abs()) {
            break;
        }
        let v = exact_policy_eval(cmdp, &pi)?;
        if v.jc[ci] > d + tol {
            lo = v;
        } else {
            hi = v;
        }
    }
    let (cl, ch) = (lo.jc[ci], hi.jc[ci]);
    let w = if (cl - ch).abs() <= tol { 0.0 } else { ((d - ch) / (cl - ch)).clamp(0.0, 1.0) };
    mixture(cmdp, &lo, &hi, w)
}

pub fn solve_cmdp(cmdp: &TabularCmdp, method: Method) -> Result<CmdpSolution> {
    let finite = cmdp.thresholds.iter().filter(|d| d.is_finite()).count();
    match method {
        Method::Simplex => solve_cmdp_lp(cmdp),
        Method::Dual => solve_cmdp_dual(cmdp),
        Method::Auto => {
            if cmdp.horizon * cmdp.n_states * cmdp.n_actions <= SIMPLEX_AUTO_LIMIT || finite > 1 {
                solve_cmdp_lp(cmdp)
            } else {
                solve_cmdp_dual(cmdp)
            }
        }
    }
}
