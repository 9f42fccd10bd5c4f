//! Bernstein-polynomial sieve for the dual of the bound program.
//!
//! The Lagrange measure on the normalized outcome range `[0, 1]` is given the
//! density `sum_j theta_j b_{j,J}(t)`, `j = 1..J`, with `theta >= 0`. For the
//! treated arm the restricted dual of the upper program reads
//!
//! ```text
//! max  theta' b - lambda_2
//! s.t. lambda_1 + q_l lambda_2 - sum_j B_{l j} theta_j = P[Y <= ybar, D = 0 | z_l]   (each l)
//!      sum_j theta_j = J + 1                                                         (optional)
//! ```
//!
//! where `b_j` and `B_{l j}` integrate the basis against the observed arm's
//! marginal and joint CDFs. Minimizing the same objective over the same set
//! gives the lower-bound counterpart.

use serde::{Deserialize, Serialize};

use crate::bounds::{arm_view, monotonize_lower, monotonize_upper, CdfBoundCurve, Direction, PointStatus};
use crate::dataset::{Arm, CdfKind, EmpiricalModel};
use crate::error::{Error, Result};
use crate::lp::{LpProblem, LpStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    /// Basis order `J`.
    pub order: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Impose unit total mass on the sieve measure.
    pub mass_constraint: bool,
}

impl SieveSpec {
    pub fn new(order: usize, y_min: f64, y_max: f64, mass_constraint: bool) -> Result<Self> {
        if order < 1 {
            return Err(Error::Argument("sieve order J must be at least 1".into()));
        }
        if !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
            return Err(Error::Argument(format!(
                "sieve range needs finite y_min < y_max, got [{y_min}, {y_max}]"
            )));
        }
        Ok(SieveSpec {
            order,
            y_min,
            y_max,
            mass_constraint,
        })
    }

    /// Uses the model's outcome range for the normalization.
    pub fn for_model(model: &EmpiricalModel, order: usize, mass_constraint: bool) -> Result<Self> {
        SieveSpec::new(order, model.y_range.0, model.y_range.1, mass_constraint)
    }

    pub fn normalize(&self, y: f64) -> f64 {
        ((y - self.y_min) / (self.y_max - self.y_min)).clamp(0.0, 1.0)
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `C(J, j) y^j (1 - y)^(J - j)`.
pub fn bernstein(j: usize, order: usize, y: f64) -> Result<f64> {
    if j > order {
        return Err(Error::Argument(format!("basis index {j} exceeds order {order}")));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Argument(format!("bernstein argument {y} outside [0, 1]")));
    }
    Ok(binom_pmf(order, j, y))
}

fn binom_pmf(n: usize, k: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if x == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, k) + k as f64 * x.ln() + (n - k) as f64 * (-x).ln_1p()).exp()
}

/// `tail[m] = P[Bin(n, x) >= m]` for `m = 0..=n+1`.
fn binomial_tails(n: usize, x: f64) -> Vec<f64> {
    let mut tail = vec![0.0; n + 2];
    let mut acc = 0.0;
    for k in (0..=n).rev() {
        acc += binom_pmf(n, k, x);
        tail[k] = acc.min(1.0);
    }
    tail[0] = 1.0;
    tail
}

/// `int_a^b b_{j,J}(y) dy` in closed form.
pub fn basis_partial_integral(j: usize, order: usize, a: f64, b: f64) -> Result<f64> {
    if j > order {
        return Err(Error::Argument(format!("basis index {j} exceeds order {order}")));
    }
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(Error::Argument(format!("need 0 <= a <= b <= 1, got [{a}, {b}]")));
    }
    let s = |x: f64| binomial_tails(order + 1, x)[j + 1];
    Ok((s(b) - s(a)) / (order + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinMoments {
    pub order: usize,
    pub arm: Arm,
    /// `int b_j(t) P[Y <= y(t) | D = d] dt` for `j = 1..J`.
    pub marginal: Vec<f64>,
    /// `joint[l][j-1] = int b_j(t) P[Y <= y(t), D = d | z_l] dt`.
    pub joint: Vec<Vec<f64>>,
}

/// Partial integrals of every basis function over each grid interval.
struct IntervalIntegrals {
    /// `i0[k][j-1]` integrates `b_j` over interval `k`.
    i0: Vec<Vec<f64>>,
    /// `i1[k][j-1]` integrates `t b_j(t)` over interval `k`.
    i1: Vec<Vec<f64>>,
}

fn interval_integrals(breaks: &[f64], order: usize) -> IntervalIntegrals {
    let tails: Vec<(Vec<f64>, Vec<f64>)> = breaks
        .iter()
        .map(|&x| (binomial_tails(order + 1, x), binomial_tails(order + 2, x)))
        .collect();
    let jj = order as f64;
    let mut i0 = Vec::with_capacity(breaks.len().saturating_sub(1));
    let mut i1 = Vec::with_capacity(breaks.len().saturating_sub(1));
    for w in tails.windows(2) {
        let (a1, a2) = &w[0];
        let (b1, b2) = &w[1];
        i0.push((1..=order).map(|j| (b1[j + 1] - a1[j + 1]) / (jj + 1.0)).collect());
        i1.push(
            (1..=order)
                .map(|j| (j as f64 + 1.0) / (jj + 1.0) * (b2[j + 2] - a2[j + 2]) / (jj + 2.0))
                .collect(),
        );
    }
    IntervalIntegrals { i0, i1 }
}

/// Integrates the basis against grid functions. Step functions are exact;
/// continuous ones are integrated exactly as their piecewise-linear
/// interpolant, held constant beyond the grid ends.
fn integrate_against(
    model: &EmpiricalModel,
    spec: &SieveSpec,
    functions: &[&[f64]],
) -> Vec<Vec<f64>> {
    let t: Vec<f64> = model.y_grid.iter().map(|&y| spec.normalize(y)).collect();
    let mut breaks = Vec::with_capacity(t.len() + 2);
    breaks.push(0.0);
    breaks.extend_from_slice(&t);
    breaks.push(1.0);
    let ints = interval_integrals(&breaks, spec.order);
    let k_last = t.len() - 1;
    functions
        .iter()
        .map(|f| {
            let mut out = vec![0.0; spec.order];
            // interval 0 is [0, t_0], interval k+1 is [t_k, t_{k+1}], the last is [t_last, 1]
            for (iv, (i0, i1)) in ints.i0.iter().zip(&ints.i1).enumerate() {
                let (a, b) = (breaks[iv], breaks[iv + 1]);
                if b <= a {
                    continue;
                }
                let (v0, slope) = if iv == 0 {
                    match model.kind {
                        CdfKind::Step => (0.0, 0.0),
                        CdfKind::Continuous => (f[0], 0.0),
                    }
                } else if iv - 1 >= k_last {
                    (f[k_last], 0.0)
                } else {
                    let k = iv - 1;
                    match model.kind {
                        CdfKind::Step => (f[k], 0.0),
                        CdfKind::Continuous => (f[k], (f[k + 1] - f[k]) / (b - a)),
                    }
                };
                for j in 0..spec.order {
                    out[j] += v0 * i0[j] + slope * (i1[j] - a * i0[j]);
                }
            }
            out
        })
        .collect()
}

pub fn compute_moments(model: &EmpiricalModel, spec: &SieveSpec, arm: Arm) -> Result<BernsteinMoments> {
    let d = arm.observed_d();
    let marginal = model.marginal(d)?;
    let mut functions: Vec<&[f64]> = vec![marginal];
    functions.extend(model.joint_subcdf[d].iter().map(|c| c.as_slice()));
    let mut all = integrate_against(model, spec, &functions);
    let joint = all.split_off(1);
    Ok(BernsteinMoments {
        order: spec.order,
        arm,
        marginal: all.pop().unwrap(),
        joint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub order: usize,
    pub direction: Direction,
    pub theta: Vec<f64>,
    pub lambda: [f64; 2],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SieveOutcome {
    Solved(DualSolution),
    /// No sieve measure of this order satisfies the dual constraints.
    DualInfeasible { order: usize },
    Unbounded { order: usize },
}

impl SieveOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            SieveOutcome::Solved(s) => Some(s.value),
            _ => None,
        }
    }
}

/// Solves the restricted dual at `ybar`. The sampled primal and this value
/// both relax the program over the whole support, so they agree only up to
/// grid and quadrature error; in practice the upper value sits below the
/// primal upper bound.
pub fn dual_sieve_bound(
    model: &EmpiricalModel,
    spec: &SieveSpec,
    moments: &BernsteinMoments,
    ybar: f64,
    direction: Direction,
    opts: &SolverOptions,
) -> Result<SieveOutcome> {
    let arm = moments.arm;
    let view = arm_view(model, arm)?;
    if moments.order != spec.order {
        return Err(Error::Argument("moments were computed for a different order".into()));
    }
    if ybar < spec.y_min || ybar > spec.y_max {
        log::warn!("ybar {ybar} outside [{}, {}]; clamped", spec.y_min, spec.y_max);
    }
    let ybar = ybar.clamp(spec.y_min, spec.y_max);
    let jn = spec.order;
    let n_levels = view.q.len();
    let cf_d = arm.counterfactual_d();
    let width = jn + 2;
    let sign = match direction {
        Direction::Upper => -1.0,
        Direction::Lower => 1.0,
    };
    let mut objective: Vec<f64> = moments.marginal.iter().map(|b| sign * b).collect();
    objective.push(0.0);
    objective.push(-sign);
    let mut lp = LpProblem::new(width).with_objective(objective);
    lp.set_free(jn);
    lp.set_free(jn + 1);
    for l in 0..n_levels {
        let mut row: Vec<f64> = moments.joint[l].iter().map(|v| -v).collect();
        row.push(1.0);
        row.push(view.q[l]);
        lp.add_eq(row, model.joint_at(cf_d, l, ybar));
    }
    if spec.mass_constraint {
        let mut row = vec![1.0; jn];
        row.extend([0.0, 0.0]);
        lp.add_eq(row, (jn + 1) as f64);
    }
    let sol = lp.solve_with(opts)?;
    Ok(match sol.status {
        LpStatus::Optimal => SieveOutcome::Solved(DualSolution {
            order: jn,
            direction,
            theta: sol.x[..jn].to_vec(),
            lambda: [sol.x[jn], sol.x[jn + 1]],
            value: sign * sol.value + 0.0,
        }),
        LpStatus::Infeasible => SieveOutcome::DualInfeasible { order: jn },
        LpStatus::Unbounded => SieveOutcome::Unbounded { order: jn },
        LpStatus::SolverFailure => {
            return Err(Error::SolverFailure(format!(
                "sieve dual of order {jn} hit the iteration limit"
            )))
        }
    })
}

/// One evaluation point of a sieve run next to the sampled primal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveComparison {
    pub ybar: f64,
    pub order: usize,
    pub direction: Direction,
    pub primal: Option<f64>,
    pub dual: Option<f64>,
    /// `primal - dual` for the upper direction and `dual - primal` for the
    /// lower one.
    pub gap: Option<f64>,
    pub outcome: SieveOutcome,
}

/// Runs the sieve dual over `eval_grid` and pairs each value with the
/// sampled primal bound from the same model.
pub fn compare_with_primal(
    model: &EmpiricalModel,
    spec: &SieveSpec,
    arm: Arm,
    direction: Direction,
    eval_grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SieveComparison>> {
    use rayon::prelude::*;
    let moments = compute_moments(model, spec, arm)?;
    eval_grid
        .par_iter()
        .map(|&ybar| {
            let outcome = dual_sieve_bound(model, spec, &moments, ybar, direction, opts)?;
            let primal = match crate::bounds::solve_gamma_bound(model, ybar, arm, direction, opts)? {
                crate::bounds::GammaOutcome::Bound(g) => Some(g.value),
                _ => None,
            };
            let dual = outcome.value();
            let gap = match (primal, dual) {
                (Some(p), Some(d)) => Some(match direction {
                    Direction::Upper => p - d,
                    Direction::Lower => d - p,
                }),
                _ => None,
            };
            Ok(SieveComparison {
                ybar,
                order: spec.order,
                direction,
                primal,
                dual,
                gap,
                outcome,
            })
        })
        .collect()
}

/// Sieve values at each evaluation point in both directions, shaped like the
/// sampled-program curve. Points where the restricted dual has no optimum
/// get the trivial bound on that side.
pub fn sieve_bound_curve(
    model: &EmpiricalModel,
    spec: &SieveSpec,
    arm: Arm,
    eval_grid: &[f64],
    opts: &SolverOptions,
) -> Result<CdfBoundCurve> {
    use rayon::prelude::*;
    let moments = compute_moments(model, spec, arm)?;
    let outcomes: Vec<(SieveOutcome, SieveOutcome)> = eval_grid
        .par_iter()
        .map(|&ybar| {
            Ok((
                dual_sieve_bound(model, spec, &moments, ybar, Direction::Lower, opts)?,
                dual_sieve_bound(model, spec, &moments, ybar, Direction::Upper, opts)?,
            ))
        })
        .collect::<Result<_>>()?;
    let status = |o: &SieveOutcome| match o {
        SieveOutcome::Solved(_) => PointStatus::Feasible,
        SieveOutcome::DualInfeasible { .. } => PointStatus::Infeasible,
        SieveOutcome::Unbounded { .. } => PointStatus::Unbounded,
    };
    let raw_lower: Vec<Option<f64>> = outcomes.iter().map(|o| o.0.value()).collect();
    let raw_upper: Vec<Option<f64>> = outcomes.iter().map(|o| o.1.value()).collect();
    let lower = monotonize_lower(&raw_lower.iter().map(|v| v.unwrap_or(0.0)).collect::<Vec<_>>());
    let upper = monotonize_upper(&raw_upper.iter().map(|v| v.unwrap_or(1.0)).collect::<Vec<_>>());
    let crossing = lower.iter().zip(&upper).map(|(l, u)| l > u).collect();
    Ok(CdfBoundCurve {
        arm,
        grid: eval_grid.to_vec(),
        feasible: raw_lower.iter().zip(&raw_upper).map(|(l, u)| l.is_some() && u.is_some()).collect(),
        lower_status: outcomes.iter().map(|o| status(&o.0)).collect(),
        upper_status: outcomes.iter().map(|o| status(&o.1)).collect(),
        raw_lower,
        raw_upper,
        lower,
        upper,
        crossing,
    })
}
