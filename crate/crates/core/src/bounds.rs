//! Bounds on counterfactual CDFs and the treatment effects built from them.
//!
//! For the treated arm and a point `ybar`, the upper bound on
//! `F_{Y0|D=1}(ybar)` is
//!
//! ```text
//! min over gamma of  -sum_l gamma_l P[Y <= ybar, D = 0 | z_l]
//! s.t.  sum_l gamma_l = 0,  sum_l gamma_l P[D = 1 | z_l] = 1,
//!       sum_l gamma_l P[Y <= y_i, D = 1 | z_l] >= P[Y <= y_i | D = 1]  for all grid y_i
//! ```
//!
//! and the lower bound reverses the inequality and maximizes. The untreated
//! arm swaps the roles of `D = 0` and `D = 1`, with `P[D = 0 | z_l]` in the
//! normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{trapezoid, Arm, EmpiricalModel};
use crate::error::{Error, Result};
use nalgebra::DMatrix;

use crate::lp::{LpProblem, LpSolution, LpStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaVector {
    pub gamma: Vec<f64>,
    pub arm: Arm,
    pub direction: Direction,
    /// Bound on the counterfactual CDF delivered by `gamma`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaOutcome {
    Bound(GammaVector),
    /// No coefficient vector satisfies the constraints on the grid: the
    /// condition is not satisfied in this sample.
    Infeasible,
    /// The program is unbounded, which rules out every value of the CDF.
    Unbounded,
}

/// The pieces of the model one arm's programs read.
pub(crate) struct ArmView<'a> {
    /// `P[D = observed_d | z_l]`.
    pub q: Vec<f64>,
    pub obs_joint: &'a [Vec<f64>],
    pub obs_marginal: &'a [f64],
    pub cf_d: usize,
}

pub(crate) fn arm_view(model: &EmpiricalModel, arm: Arm) -> Result<ArmView<'_>> {
    let d = arm.observed_d();
    let q = model.status_prob(d);
    let (lo, hi) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 {
        return Err(Error::Relevance);
    }
    Ok(ArmView {
        q,
        obs_joint: &model.joint_subcdf[d],
        obs_marginal: model.marginal(d)?,
        cf_d: arm.counterfactual_d(),
    })
}

impl ArmView<'_> {
    fn n_levels(&self) -> usize {
        self.q.len()
    }

    fn constraint_row(&self, k: usize) -> Vec<f64> {
        self.obs_joint.iter().map(|col| col[k]).collect()
    }

    /// Adds the two normalization rows that define the coefficient set.
    fn add_normalization(&self, lp: &mut LpProblem, width: usize) {
        let l = self.n_levels();
        let mut ones = vec![0.0; width];
        ones[..l].fill(1.0);
        lp.add_eq(ones, 0.0);
        let mut q = vec![0.0; width];
        q[..l].copy_from_slice(&self.q);
        lp.add_eq(q, 1.0);
    }
}

fn check_solution(sol: &LpSolution) -> Result<()> {
    if sol.status == LpStatus::SolverFailure {
        return Err(Error::SolverFailure(format!(
            "iteration limit reached after {} pivots",
            sol.iterations
        )));
    }
    Ok(())
}

/// Solves the upper or lower program at `ybar`, enforcing the constraint at
/// every point of the model's grid.
pub fn solve_gamma_bound(
    model: &EmpiricalModel,
    ybar: f64,
    arm: Arm,
    direction: Direction,
    opts: &SolverOptions,
) -> Result<GammaOutcome> {
    solve_gamma_bound_with_slack(model, ybar, arm, direction, 0.0, opts)
}

/// Same program with every grid constraint loosened by `slack`, so that
/// sampling noise in the estimated CDFs does not empty the feasible set.
/// Loosening admits more coefficient vectors, so the upper value can only
/// fall and the lower value only rise. The result need not contain the truth.
pub fn solve_gamma_bound_with_slack(
    model: &EmpiricalModel,
    ybar: f64,
    arm: Arm,
    direction: Direction,
    slack: f64,
    opts: &SolverOptions,
) -> Result<GammaOutcome> {
    check_slack(slack)?;
    let view = arm_view(model, arm)?;
    solve_with_view(model, &view, ybar, arm, direction, slack, opts)
}

fn check_slack(slack: f64) -> Result<()> {
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::Argument(format!("slack must be finite and nonnegative, got {slack}")));
    }
    Ok(())
}

/// Smallest uniform loosening of the grid constraints that makes the
/// program in `direction` feasible. The value does not depend on `ybar`.
pub fn minimal_slack(model: &EmpiricalModel, arm: Arm, direction: Direction, opts: &SolverOptions) -> Result<f64> {
    let view = arm_view(model, arm)?;
    let l = view.n_levels();
    let width = l + 1;
    let mut objective = vec![0.0; width];
    objective[l] = 1.0;
    let mut lp = LpProblem::new(width).with_objective(objective);
    for j in 0..l {
        lp.set_free(j);
    }
    view.add_normalization(&mut lp, width);
    for (k, &m) in view.obs_marginal.iter().enumerate() {
        let mut row = view.constraint_row(k);
        match direction {
            Direction::Upper => {
                row.push(1.0);
                lp.add_ge(row, m);
            }
            Direction::Lower => {
                row.push(-1.0);
                lp.add_le(row, m);
            }
        }
    }
    let sol = lp.solve_with(opts)?;
    check_solution(&sol)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value.max(0.0)),
        other => Err(Error::SolverFailure(format!("slack program ended with status {other:?}"))),
    }
}

fn solve_with_view(
    model: &EmpiricalModel,
    view: &ArmView<'_>,
    ybar: f64,
    arm: Arm,
    direction: Direction,
    slack: f64,
    opts: &SolverOptions,
) -> Result<GammaOutcome> {
    let l = view.n_levels();
    let cf: Vec<f64> = (0..l).map(|lv| model.joint_at(view.cf_d, lv, ybar)).collect();
    let sign = match direction {
        Direction::Upper => -1.0,
        Direction::Lower => 1.0,
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(view.obs_marginal.len() + 2);
    rows.push(vec![1.0; l]);
    rows.push(view.q.to_vec());
    rows.extend((0..view.obs_marginal.len()).map(|k| view.constraint_row(k)));
    let objective: Vec<f64> = cf.iter().map(|v| sign * v).collect();

    let scaled = Precondition::new(&rows, l);
    let marginal: Vec<f64> = match direction {
        Direction::Upper => view.obs_marginal.iter().map(|m| m - slack).collect(),
        Direction::Lower => view.obs_marginal.iter().map(|m| m + slack).collect(),
    };
    let mut sol = solve_bound_lp(&rows, &objective, &marginal, direction, &scaled, opts)?;
    // Scaling magnifies the objective by the size of R^{-1}, so a ray found
    // in the scaled program can be a tolerance artifact. Rays are confirmed
    // on the original data.
    if sol.status == LpStatus::Unbounded && scaled.r_inv.is_some() {
        sol = solve_bound_lp(&rows, &objective, &marginal, direction, &Precondition::identity(), opts)?;
    }
    Ok(match sol.status {
        LpStatus::Optimal => GammaOutcome::Bound(GammaVector {
            // adding zero turns a negated zero into +0
            value: -sign * sol.value + 0.0,
            gamma: sol.x,
            arm,
            direction,
        }),
        LpStatus::Infeasible => GammaOutcome::Infeasible,
        _ => GammaOutcome::Unbounded,
    })
}

/// Change of variables `gamma = R^{-1} beta` from a QR factorization of the
/// stacked constraint rows. The transformed columns are orthonormal, which
/// keeps the simplex away from the nearly collinear sub-CDF columns. When the
/// rows are rank deficient the identity map is used instead.
struct Precondition {
    r_inv: Option<DMatrix<f64>>,
}

impl Precondition {
    fn identity() -> Self {
        Self { r_inv: None }
    }

    fn new(rows: &[Vec<f64>], width: usize) -> Self {
        if rows.len() < width {
            return Self::identity();
        }
        let a = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        let r = a.qr().r();
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
            return Self::identity();
        }
        Self { r_inv: r.try_inverse() }
    }

    /// Row vector `a` mapped to `a R^{-1}`.
    fn apply(&self, a: &[f64]) -> Vec<f64> {
        match &self.r_inv {
            Some(ri) => (0..ri.ncols()).map(|j| a.iter().enumerate().map(|(i, v)| v * ri[(i, j)]).sum()).collect(),
            None => a.to_vec(),
        }
    }

    fn recover(&self, beta: &[f64]) -> Vec<f64> {
        match &self.r_inv {
            Some(ri) => (0..ri.nrows()).map(|i| (0..ri.ncols()).map(|j| ri[(i, j)] * beta[j]).sum()).collect(),
            None => beta.to_vec(),
        }
    }
}

fn solve_bound_lp(
    rows: &[Vec<f64>],
    objective: &[f64],
    marginal: &[f64],
    direction: Direction,
    scale: &Precondition,
    opts: &SolverOptions,
) -> Result<LpSolution> {
    let mut lp = LpProblem::new(objective.len()).with_objective(scale.apply(objective));
    for j in 0..objective.len() {
        lp.set_free(j);
    }
    lp.add_eq(scale.apply(&rows[0]), 0.0);
    lp.add_eq(scale.apply(&rows[1]), 1.0);
    for (row, &m) in rows[2..].iter().zip(marginal) {
        match direction {
            Direction::Upper => lp.add_ge(scale.apply(row), m),
            Direction::Lower => lp.add_le(scale.apply(row), m),
        }
    }
    let mut sol = lp.solve_with(opts)?;
    check_solution(&sol)?;
    if sol.status == LpStatus::Optimal {
        sol.x = scale.recover(&sol.x);
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Feasible,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfBoundCurve {
    pub arm: Arm,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// LP values before shaping; `None` unless that program had an optimum.
    pub raw_lower: Vec<Option<f64>>,
    pub raw_upper: Vec<Option<f64>>,
    pub lower_status: Vec<PointStatus>,
    pub upper_status: Vec<PointStatus>,
    /// Both programs had an optimum at this point.
    pub feasible: Vec<bool>,
    /// Shaped lower exceeds shaped upper at this point.
    pub crossing: Vec<bool>,
}

impl CdfBoundCurve {
    pub fn mean_width(&self) -> f64 {
        let n = self.grid.len() as f64;
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum::<f64>() / n
    }

    pub fn n_feasible(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }
}

fn outcome_parts(o: &GammaOutcome) -> (PointStatus, Option<f64>) {
    match o {
        GammaOutcome::Bound(g) => (PointStatus::Feasible, Some(g.value)),
        GammaOutcome::Infeasible => (PointStatus::Infeasible, None),
        GammaOutcome::Unbounded => (PointStatus::Unbounded, None),
    }
}

/// Upper and lower programs at every evaluation point, then shaping.
pub fn cdf_bound_curve(
    model: &EmpiricalModel,
    eval_grid: &[f64],
    arm: Arm,
    opts: &SolverOptions,
) -> Result<CdfBoundCurve> {
    cdf_bound_curve_with_slack(model, eval_grid, arm, 0.0, opts)
}

pub fn cdf_bound_curve_with_slack(
    model: &EmpiricalModel,
    eval_grid: &[f64],
    arm: Arm,
    slack: f64,
    opts: &SolverOptions,
) -> Result<CdfBoundCurve> {
    check_slack(slack)?;
    let view = arm_view(model, arm)?;
    let points: Vec<(GammaOutcome, GammaOutcome)> = eval_grid
        .par_iter()
        .map(|&y| {
            let up = solve_with_view(model, &view, y, arm, Direction::Upper, slack, opts)?;
            let lo = solve_with_view(model, &view, y, arm, Direction::Lower, slack, opts)?;
            Ok((up, lo))
        })
        .collect::<Result<_>>()?;
    Ok(assemble_curve(arm, eval_grid.to_vec(), &points))
}

fn assemble_curve(arm: Arm, grid: Vec<f64>, points: &[(GammaOutcome, GammaOutcome)]) -> CdfBoundCurve {
    let mut raw_upper = Vec::with_capacity(points.len());
    let mut raw_lower = Vec::with_capacity(points.len());
    let mut upper_status = Vec::with_capacity(points.len());
    let mut lower_status = Vec::with_capacity(points.len());
    let mut upper_in = Vec::with_capacity(points.len());
    let mut lower_in = Vec::with_capacity(points.len());
    for (up, lo) in points {
        let (su, vu) = outcome_parts(up);
        let (sl, vl) = outcome_parts(lo);
        upper_in.push(match su {
            PointStatus::Feasible => vu.unwrap(),
            PointStatus::Infeasible => 1.0,
            PointStatus::Unbounded => 0.0,
        });
        lower_in.push(match sl {
            PointStatus::Feasible => vl.unwrap(),
            PointStatus::Infeasible => 0.0,
            PointStatus::Unbounded => 1.0,
        });
        raw_upper.push(vu);
        raw_lower.push(vl);
        upper_status.push(su);
        lower_status.push(sl);
    }
    let lower = monotonize_lower(&lower_in);
    let upper = monotonize_upper(&upper_in);
    let crossing = lower.iter().zip(&upper).map(|(l, u)| l > u).collect();
    let feasible = upper_status
        .iter()
        .zip(&lower_status)
        .map(|(a, b)| *a == PointStatus::Feasible && *b == PointStatus::Feasible)
        .collect();
    CdfBoundCurve {
        arm,
        grid,
        lower,
        upper,
        raw_lower,
        raw_upper,
        lower_status,
        upper_status,
        feasible,
        crossing,
    }
}

/// Clamps to `[0, 1]` and takes the running maximum from the left.
pub fn monotonize_lower(raw: &[f64]) -> Vec<f64> {
    let mut best = 0.0f64;
    raw.iter()
        .map(|v| {
            best = best.max(v.clamp(0.0, 1.0));
            best
        })
        .collect()
}

/// Clamps to `[0, 1]` and takes the running minimum from the right.
pub fn monotonize_upper(raw: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    let mut best = 1.0f64;
    for (o, v) in out.iter_mut().zip(raw).rev() {
        best = best.min(v.clamp(0.0, 1.0));
        *o = best;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBounds {
    pub lower: f64,
    /// `+inf` when the lower CDF never reaches `tau` on the grid.
    pub upper: f64,
}

/// Worst-case quantile bounds from the shaped curves.
///
/// The lower quantile is the first grid point where the upper CDF reaches
/// `tau`, or the top of the grid when it never does; the upper quantile is
/// the first grid point where the lower CDF reaches `tau`.
pub fn quantile_bounds(curve: &CdfBoundCurve, tau: f64) -> Result<QuantileBounds> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Argument(format!("tau must lie in (0, 1), got {tau}")));
    }
    let top = curve.grid[curve.grid.len() - 1];
    let lower = curve
        .upper
        .iter()
        .position(|&v| v >= tau)
        .map_or(top, |k| curve.grid[k]);
    let upper = curve
        .lower
        .iter()
        .position(|&v| v >= tau)
        .map_or(f64::INFINITY, |k| curve.grid[k]);
    Ok(QuantileBounds { lower, upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QteBounds {
    pub tau: f64,
    pub observed_quantile: f64,
    pub counterfactual_quantile_lb: f64,
    pub counterfactual_quantile_ub: f64,
    pub qte_lb: f64,
    pub qte_ub: f64,
}

/// Bounds on `Q_{Y1|D=d}(tau) - Q_{Y0|D=d}(tau)` for the curve's arm.
pub fn qte_bounds(model: &EmpiricalModel, curve: &CdfBoundCurve, tau: f64) -> Result<QteBounds> {
    let q = quantile_bounds(curve, tau)?;
    let observed = model.arm_quantile(curve.arm.observed_d(), tau)?;
    let (qte_lb, qte_ub) = match curve.arm {
        Arm::Treated => (observed - q.upper, observed - q.lower),
        Arm::Untreated => (q.lower - observed, q.upper - observed),
    };
    Ok(QteBounds {
        tau,
        observed_quantile: observed,
        counterfactual_quantile_lb: q.lower,
        counterfactual_quantile_ub: q.upper,
        qte_lb,
        qte_ub,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteBounds {
    pub observed_mean: f64,
    pub counterfactual_mean_lb: f64,
    pub counterfactual_mean_ub: f64,
    pub ate_lb: f64,
    pub ate_ub: f64,
    /// At least one side is infinite because the curves leave mass outside the grid.
    pub unbounded: bool,
}

/// Bounds on `E[Y1 - Y0 | D = d]` by integrating the CDF envelopes.
///
/// With `bounded_support` the grid endpoints are treated as the support of
/// the outcome. Otherwise a lower curve that has not reached 1 at the top of
/// the grid (or an upper curve above 0 at the bottom) makes the
/// corresponding mean bound infinite.
pub fn ate_bounds(curve: &CdfBoundCurve, observed_mean: f64, bounded_support: bool) -> AteBounds {
    const TOL: f64 = 1e-9;
    let g = &curve.grid;
    let top = g[g.len() - 1];
    let mut unbounded = false;
    let mut cf_ub = top - trapezoid(g, &curve.lower);
    let mut cf_lb = top - trapezoid(g, &curve.upper);
    if !bounded_support {
        if curve.lower[g.len() - 1] < 1.0 - TOL {
            cf_ub = f64::INFINITY;
            unbounded = true;
        }
        if curve.upper[0] > TOL {
            cf_lb = f64::NEG_INFINITY;
            unbounded = true;
        }
    }
    let (ate_lb, ate_ub) = match curve.arm {
        Arm::Treated => (observed_mean - cf_ub, observed_mean - cf_lb),
        Arm::Untreated => (cf_lb - observed_mean, cf_ub - observed_mean),
    };
    AteBounds {
        observed_mean,
        counterfactual_mean_lb: cf_lb,
        counterfactual_mean_ub: cf_ub,
        ate_lb,
        ate_ub,
        unbounded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointIdentification {
    Identified {
        gamma: Vec<f64>,
        residual: f64,
        grid: Vec<f64>,
        curve: Vec<f64>,
    },
    NotIdentified {
        gamma: Vec<f64>,
        residual: f64,
    },
}

/// Finds the coefficient vector that best reproduces the observed arm's CDF
/// in sup norm; when the residual is within `tol_eq`, the same coefficients
/// identify the counterfactual CDF on the model grid.
pub fn point_identify(
    model: &EmpiricalModel,
    arm: Arm,
    tol_eq: f64,
    opts: &SolverOptions,
) -> Result<PointIdentification> {
    let view = arm_view(model, arm)?;
    let l = view.n_levels();
    let width = l + 1;
    let mut objective = vec![0.0; width];
    objective[l] = 1.0;
    let mut lp = LpProblem::new(width).with_objective(objective);
    for j in 0..l {
        lp.set_free(j);
    }
    view.add_normalization(&mut lp, width);
    for (k, &m) in view.obs_marginal.iter().enumerate() {
        let mut row = view.constraint_row(k);
        row.push(1.0);
        lp.add_ge(row.clone(), m);
        for v in &mut row[..l] {
            *v = -*v;
        }
        lp.add_ge(row, -m);
    }
    let sol = lp.solve_with(opts)?;
    check_solution(&sol)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::SolverFailure(format!(
            "sup-norm program ended with status {:?}",
            sol.status
        )));
    }
    let gamma = sol.x[..l].to_vec();
    let residual = view
        .obs_marginal
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let fit: f64 = gamma.iter().zip(view.obs_joint).map(|(g, col)| g * col[k]).sum();
            (fit - m).abs()
        })
        .fold(0.0, f64::max);
    if residual > tol_eq {
        return Ok(PointIdentification::NotIdentified { gamma, residual });
    }
    let cf = &model.joint_subcdf[view.cf_d];
    let curve = (0..model.y_grid.len())
        .map(|k| -gamma.iter().zip(cf).map(|(g, col)| g * col[k]).sum::<f64>())
        .collect();
    Ok(PointIdentification::Identified {
        gamma,
        residual,
        grid: model.y_grid.clone(),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CdfKind;

    /// Two-level model where both conditional CDFs of the observed arm agree.
    fn homogeneous_model(prop: Vec<f64>) -> EmpiricalModel {
        let grid = vec![0.0, 1.0, 2.0, 3.0];
        let f1 = [0.1, 0.4, 0.8, 1.0];
        let f0 = [0.2, 0.3, 0.9, 1.0];
        let j1: Vec<Vec<f64>> = prop.iter().map(|p| f1.iter().map(|v| p * v).collect()).collect();
        let j0: Vec<Vec<f64>> = prop.iter().map(|p| f0.iter().map(|v| (1.0 - p) * v).collect()).collect();
        EmpiricalModel {
            y_range: (0.0, 3.0),
            y_grid: grid,
            levels: (0..prop.len()).map(|l| l as f64).collect(),
            level_weights: vec![1.0 / prop.len() as f64; prop.len()],
            propensity: prop,
            joint_subcdf: [j0, j1],
            marginal_cdf: [Some(f0.to_vec()), Some(f1.to_vec())],
            n_per_level: None,
            kind: CdfKind::Step,
        }
    }

    #[test]
    fn two_levels_pin_gamma() {
        let m = homogeneous_model(vec![0.3, 0.7]);
        let opts = SolverOptions::default();
        let out = solve_gamma_bound(&m, 1.0, Arm::Treated, Direction::Upper, &opts).unwrap();
        let GammaOutcome::Bound(g) = out else { panic!("{out:?}") };
        assert!((g.gamma[0] + 2.5).abs() < 1e-12);
        assert!((g.gamma[1] - 2.5).abs() < 1e-12);
        let expected = 2.5 * m.joint_subcdf[0][0][1] - 2.5 * m.joint_subcdf[0][1][1];
        assert!((g.value - expected).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_model_bounds_coincide() {
        let m = homogeneous_model(vec![0.2, 0.5, 0.9]);
        let opts = SolverOptions::default();
        let curve = cdf_bound_curve(&m, &m.y_grid.clone(), Arm::Treated, &opts).unwrap();
        for (u, l) in curve.raw_upper.iter().zip(&curve.raw_lower) {
            assert!((u.unwrap() - l.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_propensity_is_relevance_error() {
        let m = homogeneous_model(vec![0.4, 0.4]);
        let r = solve_gamma_bound(&m, 1.0, Arm::Treated, Direction::Upper, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Relevance)));
    }

    #[test]
    fn monotonize_examples() {
        assert_eq!(monotonize_upper(&[0.2, 0.1, 0.3]), vec![0.1, 0.1, 0.3]);
        assert_eq!(monotonize_lower(&[-0.1, 0.5, 0.4]), vec![0.0, 0.5, 0.5]);
        let m = [0.0, 0.2, 0.2, 0.9];
        assert_eq!(monotonize_lower(&m), m.to_vec());
        assert_eq!(monotonize_upper(&m), m.to_vec());
    }

    fn curve_from(grid: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> CdfBoundCurve {
        let n = grid.len();
        CdfBoundCurve {
            arm: Arm::Treated,
            raw_lower: lower.iter().map(|v| Some(*v)).collect(),
            raw_upper: upper.iter().map(|v| Some(*v)).collect(),
            grid,
            lower,
            upper,
            lower_status: vec![PointStatus::Feasible; n],
            upper_status: vec![PointStatus::Feasible; n],
            feasible: vec![true; n],
            crossing: vec![false; n],
        }
    }

    #[test]
    fn quantile_examples() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let c = curve_from(grid.clone(), grid.clone(), grid.clone());
        let q = quantile_bounds(&c, 0.5).unwrap();
        assert_eq!((q.lower, q.upper), (0.5, 0.5));
        let c = curve_from(grid.clone(), vec![0.0; 11], grid);
        assert_eq!(quantile_bounds(&c, 0.5).unwrap().upper, f64::INFINITY);
        assert!(quantile_bounds(&c, 1.0).is_err());
    }

    #[test]
    fn ate_worst_case_is_support() {
        let grid = vec![2.0, 3.0, 4.0, 5.0];
        let c = curve_from(grid, vec![0.0; 4], vec![1.0; 4]);
        let a = ate_bounds(&c, 3.0, true);
        assert!((a.counterfactual_mean_lb - 2.0).abs() < 1e-15);
        assert!((a.counterfactual_mean_ub - 5.0).abs() < 1e-15);
        assert!(!a.unbounded);
        let a = ate_bounds(&c, 3.0, false);
        assert!(a.unbounded);
        assert_eq!(a.ate_lb, f64::NEG_INFINITY);
    }

    #[test]
    fn ate_collapses_when_curves_agree() {
        let grid = vec![0.0, 1.0, 2.0];
        let f = vec![0.2, 0.6, 1.0];
        let c = curve_from(grid, f.clone(), f);
        let a = ate_bounds(&c, 1.0, true);
        assert_eq!(a.ate_lb, a.ate_ub);
    }

    #[test]
    fn point_identified_when_homogeneous() {
        let m = homogeneous_model(vec![0.2, 0.5, 0.9]);
        let out = point_identify(&m, Arm::Treated, 1e-9, &SolverOptions::default()).unwrap();
        let PointIdentification::Identified { gamma, residual, curve, .. } = out else {
            panic!("expected identification")
        };
        assert!(residual < 1e-9);
        for (k, v) in curve.iter().enumerate() {
            let direct: f64 = -(0..3).map(|l| gamma[l] * m.joint_subcdf[0][l][k]).sum::<f64>();
            assert!((v - direct).abs() < 1e-12);
        }
    }
}
