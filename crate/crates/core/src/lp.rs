//! Dense linear programming.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c'x
//! subject to  A x  = b
//!             G x >= h
//!             x_j >= 0 for nonnegative variables, x_j free otherwise
//! ```
//!
//! and solved with a two-phase tableau simplex. The solver can work on the
//! problem as given or on its dual; the bound programs in this crate have a
//! handful of variables and up to tens of thousands of inequality rows, and
//! solving the dual keeps the tableau a few rows tall in that case.
//!
//! Multipliers follow the convention `c = A'y + G'mu + r` with `mu >= 0` and
//! `r >= 0` on nonnegative variables (`r = 0` on free ones), so that at an
//! optimum `c'x = b'y + h'mu`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarBound {
    NonNegative,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The iteration cap was reached. Not expected with the anti-cycling rule.
    SolverFailure,
}

/// Which program the simplex method is run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Pick whichever of primal and dual has fewer rows.
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub tol_feas: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    pub formulation: Formulation,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            pivot_tol: 1e-10,
            tol_feas: 1e-8,
            max_iterations: 200_000,
            bland_after: 50,
            formulation: Formulation::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub var_bounds: Vec<VarBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; empty unless optimal.
    pub x: Vec<f64>,
    /// Optimal value, `+inf` when infeasible, `-inf` when unbounded, NaN on failure.
    pub value: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn without_point(status: LpStatus, iterations: usize) -> Self {
        let value = match status {
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::NAN,
        };
        LpSolution {
            status,
            x: Vec::new(),
            value,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            iterations,
        }
    }
}

impl LpProblem {
    /// A problem with `n_vars` nonnegative variables and a zero objective.
    pub fn new(n_vars: usize) -> Self {
        LpProblem {
            n_vars,
            objective: vec![0.0; n_vars],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            var_bounds: vec![VarBound::NonNegative; n_vars],
        }
    }

    pub fn with_objective(mut self, c: Vec<f64>) -> Self {
        self.objective = c;
        self
    }

    pub fn set_free(&mut self, j: usize) {
        self.var_bounds[j] = VarBound::Free;
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    /// Adds the row `row . x >= rhs`.
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    /// Adds the row `row . x <= rhs`, stored as its negation.
    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row.into_iter().map(|v| -v).collect());
        self.ineq_rhs.push(-rhs);
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars;
        if self.objective.len() != n {
            return Err(LpError::Dimension(format!(
                "objective has {} entries, expected {n}",
                self.objective.len()
            )));
        }
        if self.var_bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} variable bounds for {n} variables",
                self.var_bounds.len()
            )));
        }
        if self.eq_rows.len() != self.eq_rhs.len() {
            return Err(LpError::Dimension(format!(
                "{} equality rows but {} right-hand sides",
                self.eq_rows.len(),
                self.eq_rhs.len()
            )));
        }
        if self.ineq_rows.len() != self.ineq_rhs.len() {
            return Err(LpError::Dimension(format!(
                "{} inequality rows but {} right-hand sides",
                self.ineq_rows.len(),
                self.ineq_rhs.len()
            )));
        }
        for (kind, rows) in [("equality", &self.eq_rows), ("inequality", &self.ineq_rows)] {
            for (i, r) in rows.iter().enumerate() {
                if r.len() != n {
                    return Err(LpError::Dimension(format!(
                        "{kind} row {i} has {} entries, expected {n}",
                        r.len()
                    )));
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(LpError::NonFinite(format!("{kind} row {i}")));
                }
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        if self.eq_rhs.iter().chain(&self.ineq_rhs).any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("right-hand side".into()));
        }
        Ok(())
    }

    /// Plain-text listing, one constraint per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term_list = |coefs: &[f64]| -> String {
            let terms: Vec<String> = coefs
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| format!("{v:+e}*x{j}"))
                .collect();
            if terms.is_empty() {
                "0".to_string()
            } else {
                terms.join(" ")
            }
        };
        let _ = writeln!(out, "minimize {}", term_list(&self.objective));
        for (i, (r, b)) in self.eq_rows.iter().zip(&self.eq_rhs).enumerate() {
            let _ = writeln!(out, "eq{i}: {} = {b:e}", term_list(r));
        }
        for (i, (r, h)) in self.ineq_rows.iter().zip(&self.ineq_rhs).enumerate() {
            let _ = writeln!(out, "ge{i}: {} >= {h:e}", term_list(r));
        }
        for (j, vb) in self.var_bounds.iter().enumerate() {
            let kind = match vb {
                VarBound::NonNegative => ">= 0",
                VarBound::Free => "free",
            };
            let _ = writeln!(out, "x{j} {kind}");
        }
        out
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.solve_with(&SolverOptions::default())
    }

    pub fn solve_with(&self, opts: &SolverOptions) -> Result<LpSolution, LpError> {
        self.validate()?;
        let m_primal = self.eq_rows.len() + self.ineq_rows.len();
        let use_dual = match opts.formulation {
            Formulation::Primal => false,
            Formulation::Dual => true,
            Formulation::Auto => self.n_vars < m_primal,
        };
        let run = |dual: bool| {
            if dual {
                self.solve_via_dual(opts)
            } else {
                self.solve_primal(opts)
            }
        };
        let sol = run(use_dual);
        if !sol.is_optimal() || self.max_violation(&sol.x) <= self.check_tol(opts) {
            return Ok(sol);
        }
        // Round-off left the point outside the feasible set; the other
        // formulation pivots through a different sequence of bases.
        let other = run(!use_dual);
        if other.is_optimal() && self.max_violation(&other.x) <= self.check_tol(opts) {
            return Ok(other);
        }
        log::warn!(
            "simplex optimum violates the constraints by {:e} under both formulations",
            self.max_violation(&sol.x)
        );
        Ok(LpSolution::without_point(LpStatus::SolverFailure, sol.iterations + other.iterations))
    }

    /// Largest violation of any row or sign restriction at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        let eq = self.eq_rows.iter().zip(&self.eq_rhs).map(|(r, b)| (dot(r) - b).abs());
        let ineq = self.ineq_rows.iter().zip(&self.ineq_rhs).map(|(r, h)| (h - dot(r)).max(0.0));
        let sign = x
            .iter()
            .zip(&self.var_bounds)
            .filter(|(_, b)| **b == VarBound::NonNegative)
            .map(|(v, _)| (-v).max(0.0));
        eq.chain(ineq).chain(sign).fold(0.0, f64::max)
    }

    fn check_tol(&self, opts: &SolverOptions) -> f64 {
        let scale = self
            .eq_rhs
            .iter()
            .chain(&self.ineq_rhs)
            .fold(1.0f64, |s, v| s.max(v.abs()));
        1e2 * opts.tol_feas * scale
    }

    fn solve_primal(&self, opts: &SolverOptions) -> LpSolution {
        let n = self.n_vars;
        let me = self.eq_rows.len();
        let mi = self.ineq_rows.len();
        let free: Vec<usize> = (0..n)
            .filter(|&j| self.var_bounds[j] == VarBound::Free)
            .collect();
        let cols = n + free.len() + mi;
        let rows = me + mi;
        let mut a = vec![0.0; rows * cols];
        let mut b = Vec::with_capacity(rows);
        for (i, (r, rhs)) in self
            .eq_rows
            .iter()
            .chain(&self.ineq_rows)
            .zip(self.eq_rhs.iter().chain(&self.ineq_rhs))
            .enumerate()
        {
            let row = &mut a[i * cols..(i + 1) * cols];
            row[..n].copy_from_slice(r);
            for (k, &j) in free.iter().enumerate() {
                row[n + k] = -r[j];
            }
            if i >= me {
                row[n + free.len() + (i - me)] = -1.0;
            }
            b.push(*rhs);
        }
        let mut c = vec![0.0; cols];
        c[..n].copy_from_slice(&self.objective);
        for (k, &j) in free.iter().enumerate() {
            c[n + k] = -self.objective[j];
        }

        let res = simplex(&StandardForm { m: rows, n: cols, a: &a, b: &b, c: &c }, opts);
        if res.status != LpStatus::Optimal {
            return LpSolution::without_point(res.status, res.iterations);
        }
        let mut x = res.x[..n].to_vec();
        for (k, &j) in free.iter().enumerate() {
            x[j] -= res.x[n + k];
        }
        let value = dot(&self.objective, &x);
        LpSolution {
            status: LpStatus::Optimal,
            x,
            value,
            eq_duals: res.pi[..me].to_vec(),
            ineq_duals: res.pi[me..].iter().map(|v| v.max(0.0)).collect(),
            iterations: res.iterations,
        }
    }

    /// Solves `max b'y + h'mu` s.t. `A'y + G'mu (+ s) = c` in standard form and
    /// reads the primal point off the dual's row multipliers.
    fn solve_via_dual(&self, opts: &SolverOptions) -> LpSolution {
        let n = self.n_vars;
        let me = self.eq_rows.len();
        let mi = self.ineq_rows.len();
        let nonneg: Vec<usize> = (0..n)
            .filter(|&j| self.var_bounds[j] == VarBound::NonNegative)
            .collect();
        let cols = 2 * me + mi + nonneg.len();
        let rows = n;
        let build = |c_rows: &[f64]| {
            let mut a = vec![0.0; rows * cols];
            for j in 0..n {
                let row = &mut a[j * cols..(j + 1) * cols];
                for i in 0..me {
                    row[i] = self.eq_rows[i][j];
                    row[me + i] = -self.eq_rows[i][j];
                }
                for k in 0..mi {
                    row[2 * me + k] = self.ineq_rows[k][j];
                }
            }
            for (s, &j) in nonneg.iter().enumerate() {
                a[j * cols + 2 * me + mi + s] = 1.0;
            }
            let mut cost = vec![0.0; cols];
            for i in 0..me {
                cost[i] = -self.eq_rhs[i];
                cost[me + i] = self.eq_rhs[i];
            }
            for k in 0..mi {
                cost[2 * me + k] = -self.ineq_rhs[k];
            }
            (a, c_rows.to_vec(), cost)
        };

        let (a, rhs, cost) = build(&self.objective);
        let res = simplex(&StandardForm { m: rows, n: cols, a: &a, b: &rhs, c: &cost }, opts);
        match res.status {
            LpStatus::Optimal => {
                let x: Vec<f64> = res.pi.iter().map(|v| -v).collect();
                let eq_duals: Vec<f64> = (0..me).map(|i| res.x[i] - res.x[me + i]).collect();
                let ineq_duals = res.x[2 * me..2 * me + mi].to_vec();
                let value = dot(&self.objective, &x);
                LpSolution {
                    status: LpStatus::Optimal,
                    x,
                    value,
                    eq_duals,
                    ineq_duals,
                    iterations: res.iterations,
                }
            }
            LpStatus::Unbounded => LpSolution::without_point(LpStatus::Infeasible, res.iterations),
            LpStatus::Infeasible => {
                // Dual infeasible: the primal is either infeasible or unbounded.
                // Decide by checking primal feasibility with a zero objective.
                let zero = vec![0.0; n];
                let (a0, rhs0, cost0) = build(&zero);
                let feas = simplex(
                    &StandardForm { m: rows, n: cols, a: &a0, b: &rhs0, c: &cost0 },
                    opts,
                );
                let iterations = res.iterations + feas.iterations;
                match feas.status {
                    LpStatus::Optimal => LpSolution::without_point(LpStatus::Unbounded, iterations),
                    LpStatus::Unbounded => {
                        LpSolution::without_point(LpStatus::Infeasible, iterations)
                    }
                    other => LpSolution::without_point(other, iterations),
                }
            }
            LpStatus::SolverFailure => {
                LpSolution::without_point(LpStatus::SolverFailure, res.iterations)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `min c'x  s.t.  A x = b, x >= 0` with `A` stored row-major.
struct StandardForm<'a> {
    m: usize,
    n: usize,
    a: &'a [f64],
    b: &'a [f64],
    c: &'a [f64],
}

struct StandardResult {
    status: LpStatus,
    x: Vec<f64>,
    /// Row multipliers with `c - A'pi >= 0` at optimality.
    pi: Vec<f64>,
    iterations: usize,
}

/// Basis size up to which the final basis is refactorized from the original
/// data to clean up drift accumulated in the tableau.
const REFINE_MAX_ROWS: usize = 800;

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r * w + q];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.data[r * w + q] = 1.0;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        self.basis[r] = q;
    }
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

/// Runs simplex pivots on the tableau. When `bounded_below` is set (phase 1)
/// a column without an eligible pivot can only be an artefact of round-off,
/// so it is skipped instead of being reported as a ray.
fn run_phase(
    t: &mut Tableau,
    allowed: usize,
    bounded_below: bool,
    opts: &SolverOptions,
    iterations: &mut usize,
) -> Phase {
    let m = t.rows;
    let obj = m;
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let mut skipped = vec![false; allowed];
    loop {
        if *iterations >= opts.max_iterations {
            return Phase::IterationLimit;
        }
        let mut entering = None;
        let mut best = -opts.tol_feas;
        for j in 0..allowed {
            if skipped[j] {
                continue;
            }
            let d = t.at(obj, j);
            if d < best {
                entering = Some(j);
                if bland {
                    break;
                }
                best = d;
            }
        }
        let Some(q) = entering else {
            return Phase::Optimal;
        };

        // A row whose basic variable is a leftover artificial blocks at ratio
        // zero whatever the sign of its entry, so the artificial stays at zero.
        let blocks = |t: &Tableau, i: usize, a: f64| {
            if t.basis[i] >= allowed {
                a.abs() > opts.pivot_tol
            } else {
                a > opts.pivot_tol
            }
        };
        let ratio_at = |t: &Tableau, i: usize, a: f64| {
            if t.basis[i] >= allowed {
                0.0
            } else {
                t.rhs(i).max(0.0) / a
            }
        };
        let mut min_ratio = f64::INFINITY;
        for i in 0..m {
            let a = t.at(i, q);
            if blocks(t, i, a) {
                min_ratio = min_ratio.min(ratio_at(t, i, a));
            }
        }
        if !min_ratio.is_finite() {
            if bounded_below {
                skipped[q] = true;
                continue;
            }
            return Phase::Unbounded;
        }
        let slack = 1e-12 * (1.0 + min_ratio);
        let mut leave = usize::MAX;
        for i in 0..m {
            let a = t.at(i, q);
            if blocks(t, i, a) && ratio_at(t, i, a) <= min_ratio + slack {
                let better = if leave == usize::MAX {
                    true
                } else if bland {
                    t.basis[i] < t.basis[leave]
                } else {
                    a.abs() > t.at(leave, q).abs()
                };
                if better {
                    leave = i;
                }
            }
        }

        if min_ratio <= opts.tol_feas {
            degenerate_run += 1;
            if degenerate_run > opts.bland_after {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
        t.pivot(leave, q);
        *iterations += 1;
        if bounded_below {
            skipped.fill(false);
        }
    }
}

/// Smallest entry an artificial is pivoted out on after phase 1.
const DRIVE_OUT_TOL: f64 = 1e-7;

fn simplex(sf: &StandardForm<'_>, opts: &SolverOptions) -> StandardResult {
    let (m, n) = (sf.m, sf.n);
    let sign: Vec<f64> = sf.b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let coef = |i: usize, j: usize| sign[i] * sf.a[i * n + j];

    // Columns that are already unit vectors can seed the basis.
    let mut start_col: Vec<Option<usize>> = vec![None; m];
    for j in 0..n {
        let mut hit = None;
        let mut unit = true;
        for i in 0..m {
            let v = coef(i, j);
            if v != 0.0 {
                if v == 1.0 && hit.is_none() {
                    hit = Some(i);
                } else {
                    unit = false;
                    break;
                }
            }
        }
        if let (true, Some(i)) = (unit, hit) {
            if start_col[i].is_none() {
                start_col[i] = Some(j);
            }
        }
    }
    let art_rows: Vec<usize> = (0..m).filter(|&i| start_col[i].is_none()).collect();
    let n_art = art_rows.len();
    let total = n + n_art;
    let width = total + 1;
    let mut data = vec![0.0; (m + 1) * width];
    for i in 0..m {
        for j in 0..n {
            data[i * width + j] = coef(i, j);
        }
        data[i * width + total] = sign[i] * sf.b[i];
    }
    let mut basis = vec![0usize; m];
    for (k, &i) in art_rows.iter().enumerate() {
        data[i * width + n + k] = 1.0;
        start_col[i] = Some(n + k);
    }
    for i in 0..m {
        basis[i] = start_col[i].expect("every row has a starting column");
    }
    let mut t = Tableau { rows: m, width, data, basis };
    let mut iterations = 0usize;

    if n_art > 0 {
        let obj = m * width;
        for &i in &art_rows {
            for j in 0..width {
                if j < n || j == total {
                    t.data[obj + j] -= t.data[i * width + j];
                }
            }
        }
        match run_phase(&mut t, total, true, opts, &mut iterations) {
            Phase::Optimal => {}
            Phase::Unbounded | Phase::IterationLimit => {
                return failed(LpStatus::SolverFailure, iterations);
            }
        }
        let infeasibility = -t.rhs(m);
        let scale = 1.0 + sf.b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if infeasibility > opts.tol_feas * scale {
            return failed(LpStatus::Infeasible, iterations);
        }
        // Drive remaining artificials out of the basis where a well-sized
        // pivot exists. Their values are within the feasibility tolerance and
        // are set to zero first so the pivot cannot spread the residual.
        // Rows without such a pivot keep an artificial at zero.
        for i in 0..m {
            if t.basis[i] >= n {
                t.data[i * width + total] = 0.0;
                let mut best = None;
                let mut best_abs = DRIVE_OUT_TOL;
                for j in 0..n {
                    let v = t.at(i, j).abs();
                    if v > best_abs {
                        best_abs = v;
                        best = Some(j);
                    }
                }
                if let Some(j) = best {
                    t.pivot(i, j);
                }
            }
        }
    }

    // Phase 2 objective row: reduced costs of the original costs.
    let obj = m * width;
    for j in 0..width {
        t.data[obj + j] = if j < n { sf.c[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = t.basis[i];
        let cb = if bj < n { sf.c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                let v = t.data[i * width + j];
                t.data[obj + j] -= cb * v;
            }
        }
    }
    match run_phase(&mut t, n, false, opts, &mut iterations) {
        Phase::Optimal => {}
        Phase::Unbounded => {
            return failed(LpStatus::Unbounded, iterations);
        }
        Phase::IterationLimit => return failed(LpStatus::SolverFailure, iterations),
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    // pi_i = c(start column) - reduced cost(start column), in flipped row space.
    let mut pi: Vec<f64> = (0..m)
        .map(|i| {
            let j = start_col[i].unwrap();
            let cj = if j < n { sf.c[j] } else { 0.0 };
            cj - t.at(m, j)
        })
        .collect();

    if m <= REFINE_MAX_ROWS && m > 0 {
        refine(sf, &sign, &t.basis, &art_rows, &mut x, &mut pi);
    }
    for i in 0..m {
        pi[i] *= sign[i];
    }
    StandardResult {
        status: LpStatus::Optimal,
        x,
        pi,
        iterations,
    }
}

fn failed(status: LpStatus, iterations: usize) -> StandardResult {
    StandardResult {
        status,
        x: Vec::new(),
        pi: Vec::new(),
        iterations,
    }
}

/// Re-solves `B x_B = b` and `B' pi = c_B` from the original data.
/// Artificial column `n + k` is the unit vector of row `art_rows[k]`.
fn refine(
    sf: &StandardForm<'_>,
    sign: &[f64],
    basis: &[usize],
    art_rows: &[usize],
    x: &mut [f64],
    pi: &mut [f64],
) {
    let (m, n) = (sf.m, sf.n);
    let mut bmat = vec![0.0; m * m];
    let mut cb = vec![0.0; m];
    for (k, &j) in basis.iter().enumerate() {
        if j < n {
            for i in 0..m {
                bmat[i * m + k] = sign[i] * sf.a[i * n + j];
            }
            cb[k] = sf.c[j];
        } else {
            bmat[art_rows[j - n] * m + k] = 1.0;
        }
    }
    let Some(lu) = Lu::factor(bmat, m) else {
        return;
    };
    let rhs: Vec<f64> = (0..m).map(|i| sign[i] * sf.b[i]).collect();
    let xb = lu.solve(&rhs);
    let new_pi = lu.solve_transpose(&cb);
    if xb.iter().chain(&new_pi).any(|v| !v.is_finite()) {
        return;
    }
    let mut candidate = x.to_vec();
    for (k, &j) in basis.iter().enumerate() {
        if j < n {
            candidate[j] = xb[k].max(0.0);
        }
    }
    // An ill-conditioned basis can make the re-solve worse than the tableau.
    if max_residual(sf, &candidate) > max_residual(sf, x) {
        return;
    }
    x.copy_from_slice(&candidate);
    pi.copy_from_slice(&new_pi);
}

fn max_residual(sf: &StandardForm<'_>, x: &[f64]) -> f64 {
    let n = sf.n;
    (0..sf.m)
        .map(|i| {
            let ax: f64 = sf.a[i * n..(i + 1) * n].iter().zip(x).map(|(a, v)| a * v).sum();
            (ax - sf.b[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, `P A = L U`.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            if pmax < 1e-14 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Some(Lu { n, lu: a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu[i * n + j] * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu[i * n + j] * y[j];
            }
            y[i] /= self.lu[i * n + i];
        }
        y
    }

    fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w = b.to_vec();
        for i in 0..n {
            for j in 0..i {
                w[i] -= self.lu[j * n + i] * w[j];
            }
            w[i] /= self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                w[i] -= self.lu[j * n + i] * w[j];
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn box_one_variable() {
        let mut p = LpProblem::new(1).with_objective(vec![-1.0]);
        p.add_ge(vec![-1.0], -1.0);
        let s = p.solve().unwrap();
        assert!(s.is_optimal());
        assert!(close(s.x[0], 1.0));
        assert!(close(s.value, -1.0));
    }

    #[test]
    fn empty_feasible_set() {
        let mut p = LpProblem::new(1);
        p.add_ge(vec![-1.0], 1.0);
        for f in [Formulation::Primal, Formulation::Dual] {
            let opts = SolverOptions { formulation: f, ..Default::default() };
            assert_eq!(p.solve_with(&opts).unwrap().status, LpStatus::Infeasible);
        }
    }

    #[test]
    fn degenerate_segment_optimum() {
        let mut p = LpProblem::new(2).with_objective(vec![-1.0, -1.0]);
        p.add_eq(vec![1.0, 1.0], 1.0);
        for f in [Formulation::Primal, Formulation::Dual] {
            let opts = SolverOptions { formulation: f, ..Default::default() };
            let s = p.solve_with(&opts).unwrap();
            assert!(close(s.value, -1.0));
            assert!(close(s.x[0] + s.x[1], 1.0));
        }
    }

    #[test]
    fn unbounded_detected_both_ways() {
        let mut p = LpProblem::new(2).with_objective(vec![-1.0, 0.0]);
        p.add_ge(vec![1.0, -1.0], 0.0);
        for f in [Formulation::Primal, Formulation::Dual] {
            let opts = SolverOptions { formulation: f, ..Default::default() };
            assert_eq!(p.solve_with(&opts).unwrap().status, LpStatus::Unbounded);
        }
    }

    #[test]
    fn free_variables_and_duals() {
        // min x + 2y, x + y = 1, y - x >= -3, x free, y free
        let mut p = LpProblem::new(2).with_objective(vec![1.0, 2.0]);
        p.set_free(0);
        p.set_free(1);
        p.add_eq(vec![1.0, 1.0], 1.0);
        p.add_ge(vec![-1.0, 1.0], -3.0);
        for f in [Formulation::Primal, Formulation::Dual] {
            let opts = SolverOptions { formulation: f, ..Default::default() };
            let s = p.solve_with(&opts).unwrap();
            assert!(s.is_optimal());
            assert!(close(s.x[0], 2.0) && close(s.x[1], -1.0), "{:?}", s.x);
            assert!(close(s.value, 0.0));
            assert!(close(s.eq_duals[0], 1.5) && close(s.ineq_duals[0], 0.5));
            let dual_value = s.eq_duals[0] * 1.0 + s.ineq_duals[0] * -3.0;
            assert!(close(dual_value, s.value));
        }
    }

    #[test]
    fn dimension_errors_are_structural() {
        let mut p = LpProblem::new(2);
        p.add_ge(vec![1.0], 0.0);
        assert!(matches!(p.solve(), Err(LpError::Dimension(_))));
        let mut q = LpProblem::new(1);
        q.add_eq(vec![f64::NAN], 0.0);
        assert!(matches!(q.solve(), Err(LpError::NonFinite(_))));
    }

    #[test]
    fn dump_lists_each_row() {
        let mut p = LpProblem::new(2).with_objective(vec![1.0, 0.0]);
        p.set_free(1);
        p.add_eq(vec![1.0, 1.0], 2.0);
        p.add_ge(vec![0.0, 1.0], -1.0);
        let text = p.dump();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("eq0:"));
        assert!(text.contains("ge0:"));
        assert!(text.contains("x1 free"));
    }

    #[test]
    fn redundant_equalities() {
        let mut p = LpProblem::new(3).with_objective(vec![1.0, 1.0, 1.0]);
        p.add_eq(vec![1.0, 1.0, 0.0], 1.0);
        p.add_eq(vec![2.0, 2.0, 0.0], 2.0);
        p.add_eq(vec![0.0, 1.0, 1.0], 1.0);
        let opts = SolverOptions { formulation: Formulation::Primal, ..Default::default() };
        let s = p.solve_with(&opts).unwrap();
        assert!(s.is_optimal());
        assert!(close(s.value, 1.0));
    }
}
