//! Testable implications of the dominance-preservation conditions.
//!
//! Under monotone take-up, differencing adjacent instrument levels (ordered
//! by propensity) identifies the outcome distributions of each complier
//! group. The preservation condition then implies that whenever one mixture
//! of complier groups dominates another in the observed arm, the same
//! ordering holds in the counterfactual arm; [`fosd_preservation_test`]
//! searches for mixtures that break this.
//!
//! [`violation_experiment`] measures how often the coefficient vector chosen
//! from a finite random constraint sample violates the constraint at a fresh
//! outcome draw.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, CdfKind, EmpiricalModel};
use crate::error::{Error, Result};
use crate::lp::{LpProblem, LpStatus, SolverOptions};
use crate::simulate::{self, DgpConfig};

pub const DEFAULT_MIN_SHARE: f64 = 0.02;

/// Compliers between two adjacent levels in propensity order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplierGroup {
    /// Level index (in the model's original order) with the lower propensity.
    pub from_level: usize,
    pub to_level: usize,
    pub share: f64,
    pub raw_y1: Vec<f64>,
    pub raw_y0: Vec<f64>,
    /// Shaped curves: nondecreasing and within `[0, 1]`.
    pub y1_cdf: Vec<f64>,
    pub y0_cdf: Vec<f64>,
    /// Largest absolute change made by shaping, over both curves.
    pub shaping_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplierCdfs {
    pub grid: Vec<f64>,
    pub kind: CdfKind,
    /// Level indices sorted by propensity.
    pub order: Vec<usize>,
    pub always_taker_share: f64,
    pub never_taker_share: f64,
    pub groups: Vec<ComplierGroup>,
    /// Adjacent pairs left out because their share fell below the threshold,
    /// as `(from_level, to_level, share)`.
    pub dropped: Vec<(usize, usize, f64)>,
}

impl ComplierCdfs {
    /// Sum of all type shares, dropped complier groups included. Equals one
    /// by construction.
    pub fn total_share(&self) -> f64 {
        self.always_taker_share
            + self.never_taker_share
            + self.groups.iter().map(|g| g.share).sum::<f64>()
            + self.dropped.iter().map(|d| d.2).sum::<f64>()
    }

    fn curves(&self, d: usize) -> Vec<&[f64]> {
        self.groups
            .iter()
            .map(|g| if d == 1 { g.y1_cdf.as_slice() } else { g.y0_cdf.as_slice() })
            .collect()
    }
}

fn shape_cdf(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut from_left = vec![0.0; n];
    let mut acc = f64::NEG_INFINITY;
    for (k, &v) in raw.iter().enumerate() {
        acc = acc.max(v);
        from_left[k] = acc;
    }
    let mut from_right = vec![0.0; n];
    let mut acc = f64::INFINITY;
    for k in (0..n).rev() {
        acc = acc.min(raw[k]);
        from_right[k] = acc;
    }
    from_left
        .iter()
        .zip(&from_right)
        .map(|(a, b)| (0.5 * (a + b)).clamp(0.0, 1.0))
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Complier outcome CDFs for every adjacent pair of levels whose propensity
/// gap is at least `min_share`.
pub fn complier_cdfs(model: &EmpiricalModel, min_share: f64) -> Result<ComplierCdfs> {
    if !(min_share > 0.0) {
        return Err(Error::Argument("minimum complier share must be positive".into()));
    }
    let mut order: Vec<usize> = (0..model.n_levels()).collect();
    order.sort_by(|&a, &b| model.propensity[a].total_cmp(&model.propensity[b]));
    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    for w in order.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let share = model.propensity[hi] - model.propensity[lo];
        if share < min_share {
            log::warn!("levels {lo} -> {hi}: complier share {share:.4} below {min_share}; dropped");
            dropped.push((lo, hi, share));
            continue;
        }
        let j1 = &model.joint_subcdf[1];
        let j0 = &model.joint_subcdf[0];
        let raw_y1: Vec<f64> = j1[hi].iter().zip(&j1[lo]).map(|(a, b)| (a - b) / share).collect();
        let raw_y0: Vec<f64> = j0[lo].iter().zip(&j0[hi]).map(|(a, b)| (a - b) / share).collect();
        let y1_cdf = shape_cdf(&raw_y1);
        let y0_cdf = shape_cdf(&raw_y0);
        let shaping_violation = max_abs_diff(&raw_y1, &y1_cdf).max(max_abs_diff(&raw_y0, &y0_cdf));
        groups.push(ComplierGroup {
            from_level: lo,
            to_level: hi,
            share,
            raw_y1,
            raw_y0,
            y1_cdf,
            y0_cdf,
            shaping_violation,
        });
    }
    if groups.is_empty() {
        return Err(Error::DiagnosticUnavailable(format!(
            "no adjacent pair of instrument levels has a complier share of at least {min_share}"
        )));
    }
    let first = order[0];
    let last = order[order.len() - 1];
    Ok(ComplierCdfs {
        grid: model.y_grid.clone(),
        kind: model.kind,
        always_taker_share: model.propensity[first],
        never_taker_share: 1.0 - model.propensity[last],
        order,
        groups,
        dropped,
    })
}

/// Which arm carries the dominance premise. `S1` orders mixtures by their
/// treated-outcome CDFs and checks the untreated ones; `S0` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FosdDirection {
    S1,
    S0,
}

impl FosdDirection {
    fn premise_d(self) -> usize {
        match self {
            FosdDirection::S1 => 1,
            FosdDirection::S0 => 0,
        }
    }
}

impl std::str::FromStr for FosdDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(FosdDirection::S1),
            "s0" => Ok(FosdDirection::S0),
            other => Err(Error::Argument(format!("unknown FOSD direction `{other}` (expected s1 or s0)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosdTestReport {
    pub direction: FosdDirection,
    pub tol: f64,
    pub max_violation: f64,
    /// Weights of the mixture that is dominated in the premise arm.
    pub omega: Vec<f64>,
    /// Weights of the mixture that dominates in the premise arm.
    pub omega_tilde: Vec<f64>,
    pub witness_y: f64,
    pub passed: bool,
    /// `(from_level, to_level)` of each complier group, in weight order.
    pub groups: Vec<(usize, usize)>,
    pub grid: Vec<f64>,
    /// Mixture CDFs at the witness weights: premise arm, then checked arm.
    pub premise_omega: Vec<f64>,
    pub premise_omega_tilde: Vec<f64>,
    pub checked_omega: Vec<f64>,
    pub checked_omega_tilde: Vec<f64>,
}

fn mix(curves: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let n = curves[0].len();
    (0..n).map(|k| curves.iter().zip(w).map(|(c, wi)| wi * c[k]).sum()).collect()
}

/// Largest amount by which the checked-arm CDF of a mixture `omega_tilde`
/// exceeds that of `omega` while `omega`'s premise-arm CDF lies everywhere at
/// or above `omega_tilde`'s.
///
/// For each candidate point `y*` an LP over the two weight simplices
/// maximizes the checked-arm gap at `y*`; the report keeps the worst point.
pub fn fosd_preservation_test(
    compliers: &ComplierCdfs,
    direction: FosdDirection,
    tol: f64,
    opts: &SolverOptions,
) -> Result<FosdTestReport> {
    let g = compliers.groups.len();
    if g < 2 {
        return Err(Error::DiagnosticUnavailable(format!(
            "the dominance test needs at least 2 complier groups, found {g}"
        )));
    }
    let pd = direction.premise_d();
    let premise = compliers.curves(pd);
    let checked = compliers.curves(1 - pd);
    let n = compliers.grid.len();

    let mut base = LpProblem::new(2 * g);
    let mut row = vec![0.0; 2 * g];
    row[..g].fill(1.0);
    base.add_eq(row, 1.0);
    let mut row = vec![0.0; 2 * g];
    row[g..].fill(1.0);
    base.add_eq(row, 1.0);
    for k in 0..n {
        let mut row: Vec<f64> = premise.iter().map(|c| c[k]).collect();
        row.extend(premise.iter().map(|c| -c[k]));
        base.add_ge(row, 0.0);
    }

    let results: Vec<(f64, Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|k| {
            // minimize sum omega F(y*) - sum omega_tilde F(y*)
            let mut c: Vec<f64> = checked.iter().map(|f| f[k]).collect();
            c.extend(checked.iter().map(|f| -f[k]));
            let lp = base.clone().with_objective(c);
            let sol = lp.solve_with(opts)?;
            match sol.status {
                LpStatus::Optimal => Ok((-sol.value, sol.x, k)),
                LpStatus::SolverFailure => Err(Error::SolverFailure(
                    "dominance test LP hit the iteration limit".into(),
                )),
                other => Err(Error::SolverFailure(format!(
                    "dominance test LP returned {other:?} although equal weights are feasible"
                ))),
            }
        })
        .collect::<Result<_>>()?;

    let (value, x, k) = results
        .into_iter()
        .fold(None::<(f64, Vec<f64>, usize)>, |best, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .expect("grid is nonempty");
    let clean = |w: &[f64]| -> Vec<f64> {
        let w: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    };
    let omega = clean(&x[..g]);
    let omega_tilde = clean(&x[g..]);
    let max_violation = value.max(0.0);
    Ok(FosdTestReport {
        direction,
        tol,
        max_violation,
        premise_omega: mix(&premise, &omega),
        premise_omega_tilde: mix(&premise, &omega_tilde),
        checked_omega: mix(&checked, &omega),
        checked_omega_tilde: mix(&checked, &omega_tilde),
        omega,
        omega_tilde,
        witness_y: compliers.grid[k],
        passed: max_violation <= tol,
        groups: compliers.groups.iter().map(|g| (g.from_level, g.to_level)).collect(),
        grid: compliers.grid.clone(),
    })
}

/// Settings of the violation-probability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViolationSpec {
    /// Constraint-sample size per replication.
    pub n: usize,
    pub reps: usize,
    pub eval_n: usize,
    pub seed: u64,
    pub arm: Arm,
    /// Point at which the upper program is solved; the median of the true
    /// counterfactual distribution when absent.
    pub ybar: Option<f64>,
    /// A fresh draw counts as violating when the constraint fails by more
    /// than this amount.
    pub violation_tol: f64,
}

impl Default for ViolationSpec {
    fn default() -> Self {
        ViolationSpec {
            n: 100,
            reps: 200,
            eval_n: 100_000,
            seed: 7,
            arm: Arm::Treated,
            ybar: None,
            violation_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub n: usize,
    pub reps: usize,
    pub eval_n: usize,
    pub ybar: f64,
    /// Replications whose program had an optimum.
    pub used_reps: usize,
    pub infeasible_reps: usize,
    pub unbounded_reps: usize,
    pub mean_violation: f64,
    pub mc_stderr: f64,
    /// `1 / (n + 1)`.
    pub bound: f64,
    pub violations: Vec<f64>,
}

/// Population constraint functions of one arm at a set of outcome values:
/// the observed-arm joint sub-CDF at each level and the arm's marginal CDF.
struct ConstraintValues {
    joint: Vec<Vec<f64>>,
    marginal: Vec<f64>,
}

fn constraint_values(cfg: &DgpConfig, d: usize, ys: &[f64]) -> ConstraintValues {
    let joint = ys
        .par_iter()
        .map(|&y| (0..cfg.levels).map(|l| simulate::joint_subcdf(cfg, d, l, y)).collect())
        .collect();
    let marginal = ys.par_iter().map(|&y| simulate::observed_cdf(cfg, d, y)).collect();
    ConstraintValues { joint, marginal }
}

fn pooled_draws(cfg: &DgpConfig, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    let sample = simulate::draw_sample_with(cfg, n, rng)?;
    Ok(sample.observations().iter().map(|o| o.y).collect())
}

/// Amount by which `gamma` violates the upper-program constraint at each
/// point: `P[Y <= y | D = d] - sum_l gamma_l P[Y <= y, D = d | z_l]`.
fn constraint_gaps(values: &ConstraintValues, gamma: &[f64]) -> Vec<f64> {
    values
        .joint
        .iter()
        .zip(&values.marginal)
        .map(|(row, m)| m - row.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

enum RepOutcome {
    Solved(Vec<f64>),
    Infeasible,
    Unbounded,
}

fn solve_on_scenarios(
    cfg: &DgpConfig,
    arm: Arm,
    values: &ConstraintValues,
    ybar: f64,
    opts: &SolverOptions,
) -> Result<RepOutcome> {
    let l = cfg.levels;
    let cf_d = arm.counterfactual_d();
    let q: Vec<f64> = if arm.observed_d() == 1 {
        cfg.propensities()
    } else {
        cfg.propensities().iter().map(|p| 1.0 - p).collect()
    };
    let c: Vec<f64> = (0..l).map(|lv| -simulate::joint_subcdf(cfg, cf_d, lv, ybar)).collect();
    let mut lp = LpProblem::new(l).with_objective(c);
    for j in 0..l {
        lp.set_free(j);
    }
    lp.add_eq(vec![1.0; l], 0.0);
    lp.add_eq(q, 1.0);
    for (row, &m) in values.joint.iter().zip(&values.marginal) {
        lp.add_ge(row.clone(), m);
    }
    let sol = lp.solve_with(opts)?;
    Ok(match sol.status {
        LpStatus::Optimal => RepOutcome::Solved(sol.x),
        LpStatus::Infeasible => RepOutcome::Infeasible,
        LpStatus::Unbounded => RepOutcome::Unbounded,
        LpStatus::SolverFailure => {
            return Err(Error::SolverFailure("scenario program hit the iteration limit".into()))
        }
    })
}

/// Share of `values` points where `gamma` violates the constraint by more
/// than `tol`.
pub fn violation_share(cfg: &DgpConfig, arm: Arm, gamma: &[f64], ys: &[f64], tol: f64) -> f64 {
    let values = constraint_values(cfg, arm.observed_d(), ys);
    let gaps = constraint_gaps(&values, gamma);
    gaps.iter().filter(|&&h| h > tol).count() as f64 / ys.len() as f64
}

/// Repeatedly solves the upper program with constraints imposed only at `n`
/// pooled outcome draws and estimates the probability that a fresh draw
/// violates the resulting constraint.
///
/// Replication `r` uses stream `r` of a ChaCha generator seeded with
/// `spec.seed`; the evaluation draws come from a separate stream shared by
/// all replications and independent of every constraint sample.
pub fn violation_experiment(
    cfg: &DgpConfig,
    spec: &ViolationSpec,
    opts: &SolverOptions,
) -> Result<ViolationReport> {
    cfg.validate()?;
    if spec.reps == 0 {
        return Err(Error::config("reps", "need at least one replication"));
    }
    if spec.n < cfg.levels {
        return Err(Error::config(
            "n",
            format!("constraint sample size {} is below the number of levels {}", spec.n, cfg.levels),
        ));
    }
    if spec.eval_n == 0 {
        return Err(Error::config("eval_n", "evaluation sample must be nonempty"));
    }
    if spec.reps < 50 {
        log::warn!("only {} replications; the Monte Carlo error will be large", spec.reps);
    }
    let ybar = spec
        .ybar
        .unwrap_or_else(|| simulate::counterfactual_quantile(cfg, spec.arm, 0.5));
    let d = spec.arm.observed_d();

    let mut eval_rng = ChaCha20Rng::seed_from_u64(spec.seed);
    eval_rng.set_stream(u64::MAX);
    let eval_y = pooled_draws(cfg, spec.eval_n, &mut eval_rng)?;
    let eval_values = constraint_values(cfg, d, &eval_y);

    let outcomes: Vec<RepOutcome> = (0..spec.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64);
            let ys = pooled_draws(cfg, spec.n, &mut rng)?;
            let values = constraint_values(cfg, d, &ys);
            solve_on_scenarios(cfg, spec.arm, &values, ybar, opts)
        })
        .collect::<Result<_>>()?;

    let mut violations = Vec::new();
    let (mut infeasible, mut unbounded) = (0, 0);
    for o in outcomes {
        match o {
            RepOutcome::Solved(gamma) => {
                let gaps = constraint_gaps(&eval_values, &gamma);
                let bad = gaps.iter().filter(|&&h| h > spec.violation_tol).count();
                violations.push(bad as f64 / spec.eval_n as f64);
            }
            RepOutcome::Infeasible => infeasible += 1,
            RepOutcome::Unbounded => unbounded += 1,
        }
    }
    if violations.is_empty() {
        return Err(Error::Experiment(format!(
            "no replication produced an optimum ({infeasible} infeasible, {unbounded} unbounded)"
        )));
    }
    let m = violations.len() as f64;
    let mean = violations.iter().sum::<f64>() / m;
    let sd = if violations.len() > 1 {
        (violations.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ViolationReport {
        n: spec.n,
        reps: spec.reps,
        eval_n: spec.eval_n,
        ybar,
        used_reps: violations.len(),
        infeasible_reps: infeasible,
        unbounded_reps: unbounded,
        mean_violation: mean,
        mc_stderr: sd / m.sqrt(),
        bound: 1.0 / (spec.n as f64 + 1.0),
        violations,
    })
}
