//! Dense two-phase tableau simplex with Bland's anti-cycling rule.

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// `maximize cᵀx  s.t.  A_eq x = b_eq,  A_le x ≤ b_le,  x ≥ 0` with dense rows.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    equalities: Vec<(Vec<f64>, f64)>,
    inequalities: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self { n_vars: objective.len(), objective, ..Default::default() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn add_equality(&mut self, row: Vec<f64>, rhs: f64) -> Result<()> {
        self.check_row(&row)?;
        self.equalities.push((row, rhs));
        Ok(())
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> Result<()> {
        self.check_row(&row)?;
        self.inequalities.push((row, rhs));
        Ok(())
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_vars {
            return Err(Error::Shape(format!("constraint row has {} entries for {} variables", row.len(), self.n_vars)));
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).solve(self)
    }
}

struct Tableau {
    rows: usize,
    /// Columns excluding the right-hand side.
    cols: usize,
    /// `(rows + 1) × (cols + 1)`, last row is the objective, last column the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars;
        // Normalize every row to a non-negative rhs, tracking which need a slack
        // (+1), a surplus (-1) and/or an artificial variable.
        struct Row {
            coef: Vec<f64>,
            rhs: f64,
            slack: Option<f64>,
            artificial: bool,
        }
        let mut rows = Vec::new();
        for (coef, rhs) in &lp.equalities {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            rows.push(Row { coef: coef.iter().map(|c| c * sign).collect(), rhs: rhs * sign, slack: None, artificial: true });
        }
        for (coef, rhs) in &lp.inequalities {
            if *rhs >= 0.0 {
                rows.push(Row { coef: coef.clone(), rhs: *rhs, slack: Some(1.0), artificial: false });
            } else {
                rows.push(Row { coef: coef.iter().map(|c| -c).collect(), rhs: -rhs, slack: Some(-1.0), artificial: true });
            }
        }
        let n_slack = rows.iter().filter(|r| r.slack.is_some()).count();
        let n_art = rows.iter().filter(|r| r.artificial).count();
        let m = rows.len();
        let cols = n + n_slack + n_art;
        let w = cols + 1;
        let mut t = vec![0.0; (m + 1) * w];
        let mut basis = vec![0; m];
        let (mut next_slack, mut next_art) = (n, n + n_slack);
        for (i, row) in rows.iter().enumerate() {
            t[i * w..i * w + n].copy_from_slice(&row.coef);
            t[i * w + cols] = row.rhs;
            if let Some(s) = row.slack {
                t[i * w + next_slack] = s;
                if !row.artificial {
                    basis[i] = next_slack;
                }
                next_slack += 1;
            }
            if row.artificial {
                t[i * w + next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
        Self { rows: m, cols, t, basis, first_artificial: n + n_slack, pivots: 0 }
    }

    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width() + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.at(pr, pc);
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        let pivot_row: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                for (c, pv) in pivot_row.iter().enumerate() {
                    self.t[r * w + c] -= f * pv;
                }
                self.t[r * w + pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Sets the objective row to reduced costs of `maximize Σ coef_j x_j`.
    fn load_objective(&mut self, coef: &[f64]) {
        let w = self.width();
        let obj = self.rows * w;
        for c in 0..w {
            self.t[obj + c] = 0.0;
        }
        for (j, &cj) in coef.iter().enumerate() {
            self.t[obj + j] = -cj;
        }
        for r in 0..self.rows {
            let f = self.t[obj + self.basis[r]];
            if f != 0.0 {
                for c in 0..w {
                    self.t[obj + c] -= f * self.t[r * w + c];
                }
            }
        }
    }

    /// Bland's rule iterations over columns `< allowed`.
    fn iterate(&mut self, allowed: usize) -> Result<()> {
        let max_pivots = 200_000;
        loop {
            let entering = (0..allowed).find(|&c| self.at(self.rows, c) < -EPS);
            let Some(pc) = entering else { return Ok(()) };
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.at(r, self.cols) / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => ratio < br - EPS || (ratio <= br + EPS && self.basis[r] < bb),
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            let Some((_, pr, _)) = best else { return Err(Error::Unbounded) };
            self.pivot(pr, pc);
            if self.pivots > max_pivots {
                return Err(Error::InvalidArgument("simplex pivot limit exceeded".into()));
            }
        }
    }

    fn solve(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let n_art = self.cols - self.first_artificial;
        if n_art > 0 {
            let mut phase1 = vec![0.0; self.cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            self.load_objective(&phase1);
            self.iterate(self.cols)?;
            let infeasibility = -self.at(self.rows, self.cols);
            if infeasibility > 1e-7 {
                return Err(Error::Infeasible(format!("phase one ends with artificial sum {infeasibility:.3e}")));
            }
            // Drive zero-level artificials out of the basis where possible.
            for r in 0..self.rows {
                if self.basis[r] >= self.first_artificial {
                    if let Some(c) = (0..self.first_artificial).find(|&c| self.at(r, c).abs() > EPS) {
                        self.pivot(r, c);
                    }
                }
            }
        }
        self.load_objective(&lp.objective);
        self.iterate(self.first_artificial)?;
        let mut x = vec![0.0; lp.n_vars];
        for r in 0..self.rows {
            if self.basis[r] < lp.n_vars {
                x[self.basis[r]] = self.at(r, self.cols).max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: self.pivots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximum() {
        // max x + 2y, x + y ≤ 4, -2x - y ≤ -2, y ≤ 3 → 7 at (1, 3).
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_le(vec![1.0, 1.0], 4.0).unwrap();
        lp.add_le(vec![-2.0, -1.0], -2.0).unwrap();
        lp.add_le(vec![0.0, 1.0], 3.0).unwrap();
        let s = lp.solve().unwrap();
        assert!((s.objective - 7.0).abs() < 1e-9);
        assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn equality_constraints() {
        // max x - y with x + y = 1 → 1.
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.add_equality(vec![1.0, 1.0], 1.0).unwrap();
        assert!((lp.solve().unwrap().objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_equality(vec![1.0, 1.0], 2.0).unwrap();
        lp.add_equality(vec![2.0, 2.0], 4.0).unwrap();
        assert!((lp.solve().unwrap().objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_le(vec![1.0], -1.0).unwrap();
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
        let free = LinearProgram::new(vec![1.0]);
        assert!(matches!(free.solve(), Err(Error::Unbounded)));
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0]);
        lp.add_le(vec![0.25, -60.0, -0.04, 9.0], 0.0).unwrap();
        lp.add_le(vec![0.5, -90.0, -0.02, 3.0], 0.0).unwrap();
        lp.add_le(vec![0.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        let s = lp.solve().unwrap();
        assert!((s.objective - 0.05).abs() < 1e-9);
    }
}
