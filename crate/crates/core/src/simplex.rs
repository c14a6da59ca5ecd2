//! Dense tableau simplex for small and medium linear programs.
//!
//! Problems are stated as `maximize c.x` subject to `<=`, `>=` and `=` rows
//! with `x >= 0`. The solver runs a two-phase method: an optional crash basis
//! supplied by the caller is installed first, rows whose basic value is
//! infeasible get an artificial variable, and phase 1 drives those out.
//! Pricing is Dantzig's largest reduced cost; after a run of degenerate
//! pivots the solver switches to Bland's lowest-index rule until the
//! objective moves again. Ties in the ratio test always go to the lowest
//! basic variable index, so results are deterministic.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse coefficients `(variable, value)`; duplicates are summed.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.value(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `maximize objective.x` subject to `constraints`, `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            constraints: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn set_objective_coeff(&mut self, var: usize, value: f64) {
        self.objective[var] = value;
    }

    pub fn add_to_objective(&mut self, var: usize, value: f64) {
        self.objective[var] += value;
    }

    /// Appends a row and returns its index.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n_vars));
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        rows.max(bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    /// The objective is unbounded; never expected for occupancy programs.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values; meaningful only when `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Basic column per row at termination (structural `< n_vars`,
    /// slack/artificial indices above that).
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Anything that can solve a [`LinearProgram`].
pub trait LpBackend {
    /// `basis_hint`, when given, has one entry per row: `Some(j)` asks for
    /// structural column `j` to be basic in that row, `None` leaves the row to
    /// its slack (or an artificial). Backends may ignore the hint.
    fn solve(&self, lp: &LinearProgram, basis_hint: Option<&[Option<usize>]>) -> Result<LpSolution, LpError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pricing {
    /// Largest reduced cost, Bland after a degenerate streak.
    DantzigBland,
    /// Lowest-index rule throughout.
    Bland,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseSimplex {
    /// Pivot budget is `iteration_factor * (rows + columns)`.
    pub iteration_factor: usize,
    pub pricing: Pricing,
    /// Degenerate pivots tolerated before switching to Bland.
    pub degenerate_switch: usize,
    /// Reduced-cost threshold for entering variables.
    pub optimality_tol: f64,
    /// Smallest acceptable pivot magnitude.
    pub pivot_tol: f64,
    /// Phase-1 residual above which the program is declared infeasible.
    pub feasibility_tol: f64,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex {
            iteration_factor: 50,
            pricing: Pricing::DantzigBland,
            degenerate_switch: 30,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            feasibility_tol: 1e-8,
        }
    }
}

impl LpBackend for DenseSimplex {
    fn solve(&self, lp: &LinearProgram, basis_hint: Option<&[Option<usize>]>) -> Result<LpSolution, LpError> {
        let mut tab = match basis_hint {
            Some(hint) if hint.len() == lp.constraints.len() => {
                match Tableau::build(lp, Some(hint), self.pivot_tol) {
                    Some(t) => t,
                    None => Tableau::build(lp, None, self.pivot_tol).expect("cold start cannot fail"),
                }
            }
            _ => Tableau::build(lp, None, self.pivot_tol).expect("cold start cannot fail"),
        };
        let limit = self.iteration_factor * (tab.m + tab.n_real).max(1);
        let mut iterations = 0;

        if tab.has_artificials() {
            tab.set_phase1_objective();
            match self.run(&mut tab, &mut iterations, limit)? {
                Outcome::Optimal => {}
                // phase 1 is bounded below by zero
                Outcome::Unbounded => {
                    return Err(LpError::Numerical("phase 1 reported unbounded".into()))
                }
            }
            if tab.artificial_sum() > self.feasibility_tol {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: vec![0.0; lp.n_vars],
                    objective: f64::NAN,
                    iterations,
                    basis: tab.basis.clone(),
                });
            }
            tab.drive_out_artificials(self.pivot_tol);
        }

        tab.set_phase2_objective(&lp.objective);
        let status = match self.run(&mut tab, &mut iterations, limit)? {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Unbounded => LpStatus::Unbounded,
        };
        let x = tab.primal(lp.n_vars);
        let objective = if status == LpStatus::Optimal {
            lp.objective_value(&x)
        } else {
            f64::INFINITY
        };
        Ok(LpSolution {
            status,
            x,
            objective,
            iterations,
            basis: tab.basis.clone(),
        })
    }
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl DenseSimplex {
    fn run(&self, tab: &mut Tableau, iterations: &mut usize, limit: usize) -> Result<Outcome, LpError> {
        let mut degenerate_streak = 0;
        loop {
            let bland = self.pricing == Pricing::Bland || degenerate_streak >= self.degenerate_switch;
            let Some(q) = tab.entering(bland, self.optimality_tol) else {
                return Ok(Outcome::Optimal);
            };
            let Some(r) = tab.leaving(q, self.pivot_tol) else {
                return Ok(Outcome::Unbounded);
            };
            *iterations += 1;
            if *iterations > limit {
                return Err(LpError::IterationLimit(limit));
            }
            let step = tab.at(r, tab.rhs_col()) / tab.at(r, q);
            if step <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            tab.pivot(r, q);
        }
    }
}

const NO_BASIS: usize = usize::MAX;
const DROP_TOL: f64 = 1e-13;

/// Row-major tableau. Columns: structural, then one slack per inequality
/// row, then one (possibly unused) artificial per row, then the rhs.
struct Tableau {
    m: usize,
    n_struct: usize,
    /// Structural plus slack columns: the ones allowed to enter.
    n_real: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    slack_of_row: Vec<Option<usize>>,
    artificial_used: Vec<bool>,
    /// Reduced costs, `width` entries (rhs entry unused).
    obj: Vec<f64>,
    nz: Vec<usize>,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn art_col(&self, row: usize) -> usize {
        self.n_real + row
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.width;
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Returns `None` if a hinted pivot is numerically unusable.
    fn build(lp: &LinearProgram, hint: Option<&[Option<usize>]>, pivot_tol: f64) -> Option<Tableau> {
        let m = lp.constraints.len();
        let n = lp.n_vars;
        let n_slack = lp.constraints.iter().filter(|c| c.sense != Sense::Eq).count();
        let n_real = n + n_slack;
        let width = n_real + m + 1;
        let mut data = vec![0.0; m * width];
        let mut slack_of_row = vec![None; m];
        let mut next_slack = n;
        for (i, con) in lp.constraints.iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for &(j, c) in &con.coeffs {
                row[j] += c;
            }
            match con.sense {
                Sense::Le => {
                    row[next_slack] = 1.0;
                    slack_of_row[i] = Some(next_slack);
                    next_slack += 1;
                }
                Sense::Ge => {
                    row[next_slack] = -1.0;
                    slack_of_row[i] = Some(next_slack);
                    next_slack += 1;
                }
                Sense::Eq => {}
            }
            row[width - 1] = con.rhs;
        }
        let mut tab = Tableau {
            m,
            n_struct: n,
            n_real,
            width,
            data,
            basis: vec![NO_BASIS; m],
            slack_of_row,
            artificial_used: vec![false; m],
            obj: vec![0.0; width],
            nz: Vec::with_capacity(width),
        };

        if let Some(hint) = hint {
            for (i, h) in hint.iter().enumerate() {
                if let Some(j) = *h {
                    if j >= n || tab.basis.contains(&j) || tab.at(i, j).abs() < pivot_tol {
                        return None;
                    }
                    tab.pivot(i, j);
                }
            }
        }

        let rhs = width - 1;
        for i in 0..m {
            if tab.basis[i] != NO_BASIS {
                let v = tab.at(i, rhs);
                if v < -1e-11 {
                    tab.install_artificial(i);
                } else if v < 0.0 {
                    tab.row_mut(i)[rhs] = 0.0;
                }
                continue;
            }
            match tab.slack_of_row[i] {
                Some(s) if tab.at(i, rhs) * tab.at(i, s) >= 0.0 => {
                    let sigma = tab.at(i, s);
                    if sigma != 1.0 {
                        for v in tab.row_mut(i) {
                            *v /= sigma;
                        }
                    }
                    tab.basis[i] = s;
                }
                _ => tab.install_artificial(i),
            }
        }
        Some(tab)
    }

    /// Makes row `i`'s artificial basic, negating the row if needed so its
    /// value is nonnegative.
    fn install_artificial(&mut self, i: usize) {
        let rhs = self.rhs_col();
        if self.at(i, rhs) < 0.0 {
            for v in self.row_mut(i) {
                *v = -*v;
            }
        }
        let a = self.art_col(i);
        self.row_mut(i)[a] = 1.0;
        self.basis[i] = a;
        self.artificial_used[i] = true;
    }

    fn has_artificials(&self) -> bool {
        self.artificial_used.iter().any(|&u| u)
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.n_real && col < self.rhs_col()
    }

    fn artificial_sum(&self) -> f64 {
        let rhs = self.rhs_col();
        (0..self.m)
            .filter(|&i| self.is_artificial(self.basis[i]))
            .map(|i| self.at(i, rhs))
            .sum()
    }

    /// maximize `-sum(artificials)`.
    fn set_phase1_objective(&mut self) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            if self.is_artificial(self.basis[i]) {
                let w = self.width;
                for j in 0..w {
                    self.obj[j] += self.data[i * w + j];
                }
            }
        }
        for i in 0..self.m {
            if self.artificial_used[i] {
                let a = self.art_col(i);
                self.obj[a] -= 1.0;
            }
        }
    }

    fn set_phase2_objective(&mut self, c: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..self.n_struct].copy_from_slice(c);
        for i in 0..self.m {
            let b = self.basis[i];
            let cb = if b < self.n_struct { c[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..w {
                    self.obj[j] -= cb * self.data[i * w + j];
                }
            }
        }
    }

    fn drive_out_artificials(&mut self, pivot_tol: f64) {
        for i in 0..self.m {
            if !self.is_artificial(self.basis[i]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_real {
                let v = self.at(i, j).abs();
                if v > pivot_tol && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                self.pivot(i, j);
            }
            // otherwise the row is redundant; its artificial stays basic at zero
        }
    }

    fn entering(&self, bland: bool, tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n_real {
            let d = self.obj[j];
            if d > tol {
                if bland {
                    return Some(j);
                }
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn leaving(&self, q: usize, pivot_tol: f64) -> Option<usize> {
        let rhs = self.rhs_col();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a <= pivot_tol {
                continue;
            }
            let ratio = self.at(i, rhs) / a;
            match best {
                None => best = Some((i, ratio)),
                Some((r, br)) => {
                    let tie = 1e-12 * br.abs().max(1.0);
                    if ratio < br - tie || (ratio <= br + tie && self.basis[i] < self.basis[r]) {
                        best = Some((i, ratio));
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let piv = self.at(r, q);
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                if *v != 0.0 {
                    *v *= inv;
                }
            }
            row[q] = 1.0;
        }
        self.nz.clear();
        for j in 0..w {
            if self.data[r * w + j] != 0.0 {
                self.nz.push(j);
            }
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let nz = &self.nz;
        let update = |row: &mut [f64]| {
            let f = row[q];
            if f == 0.0 {
                return;
            }
            for &j in nz {
                let v = row[j] - f * prow[j];
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
            let rhs = w - 1;
            if row[rhs] < 0.0 && row[rhs] > -1e-11 {
                row[rhs] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(update);
        after.chunks_exact_mut(w).for_each(update);
        let f = self.obj[q];
        if f != 0.0 {
            for &j in nz {
                self.obj[j] -= f * prow[j];
            }
            self.obj[q] = 0.0;
        }
        self.basis[r] = q;
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let rhs = self.rhs_col();
        let mut x = vec![0.0; n];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < n {
                x[b] = self.at(i, rhs).max(0.0);
            }
        }
        x
    }
}
