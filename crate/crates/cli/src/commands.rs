use clap::ValueEnum;
use qtebounds::bounds::{
    ate_bounds, cdf_bound_curve, cdf_bound_curve_with_slack, minimal_slack, point_identify, Direction, qte_bounds, AteBounds, CdfBoundCurve, PointStatus,
    QteBounds,
};
use qtebounds::dataset::{estimate, load_csv, EmpiricalModel};
use qtebounds::diagnostics::{complier_cdfs, fosd_preservation_test, violation_experiment, ComplierCdfs};
use qtebounds::sieve::{sieve_bound_curve, SieveSpec};
use qtebounds::simulate::{draw_sample, population_instance, true_counterfactual_cdf, write_sample_csv};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, SolverChoice};
use crate::error::CliError;
use crate::output::{fmt_f64, manifest_and, OutputDir, Table};

/// A command's verdict: `Some` carries a substantive negative finding.
pub type Finding = Option<String>;

struct Instance {
    model: EmpiricalModel,
    eval: Vec<f64>,
    truth: Option<Vec<f64>>,
}

fn instance(cfg: &RunConfig) -> Result<Instance, CliError> {
    cfg.require_data()?;
    if cfg.population {
        let (model, eval) = population_instance(&cfg.dgp, &cfg.population_grid)?;
        let truth = true_counterfactual_cdf(&cfg.dgp, &eval, cfg.arm);
        return Ok(Instance {
            model,
            eval,
            truth: Some(truth),
        });
    }
    let path = cfg.input.as_deref().expect("checked by require_data");
    let sample = load_csv(path, &cfg.columns)?;
    log::info!("read {} observations from {}", sample.len(), path.display());
    let model = estimate(&sample, &cfg.constraint_grid)?;
    let eval = sample.pooled_quantiles(cfg.eval_points);
    Ok(Instance {
        model,
        eval,
        truth: None,
    })
}

fn output(cfg: &RunConfig, force: bool, files: &[&str]) -> Result<OutputDir, CliError> {
    OutputDir::prepare(&cfg.output, force, &manifest_and(files))
}

pub fn simulate(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let mut out = output(cfg, force, &["sample.csv"])?;
    let sample = draw_sample(&cfg.dgp)?;
    let mut bytes = Vec::new();
    write_sample_csv(&sample, &mut bytes).map_err(|e| CliError::Serialize(e.to_string()))?;
    out.write_bytes("sample.csv", &bytes)?;
    out.finish(
        "simulate",
        cfg,
        json!({ "n": sample.len(), "levels": cfg.dgp.levels, "seed": cfg.dgp.seed }),
    )?;
    Ok(None)
}

pub fn estimate_cmd(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let mut out = output(cfg, force, &["model.json"])?;
    let inst = instance(cfg)?;
    if let Err(msg) = inst.model.check_invariants(1e-8) {
        log::warn!("estimated model fails an invariant check: {msg}");
    }
    out.write_json("model.json", &inst.model)?;
    out.finish(
        "estimate",
        cfg,
        json!({
            "levels": inst.model.levels,
            "propensity": inst.model.propensity,
            "grid_points": inst.model.y_grid.len(),
        }),
    )?;
    Ok(None)
}

#[derive(Debug, Serialize)]
struct SieveSummary {
    order: usize,
    mass_constraint: bool,
    solved_upper: usize,
    solved_lower: usize,
    /// Largest `sampled upper - sieve upper` over points where both solved.
    max_gap_upper: Option<f64>,
    /// Largest `sieve lower - sampled lower` over points where both solved.
    max_gap_lower: Option<f64>,
    mean_width: f64,
}

#[derive(Debug, Serialize)]
struct BoundsSummary {
    arm: qtebounds::dataset::Arm,
    solver: SolverChoice,
    eval_points: usize,
    feasible_points: usize,
    crossing_points: usize,
    mean_width: f64,
    qte: Vec<QteBounds>,
    ate: AteBounds,
    sieve: Option<SieveSummary>,
    /// Constraint loosening used by the sampled program.
    slack: f64,
    /// Smallest loosening that makes each sampled program feasible.
    minimal_slack: Option<SlackPair>,
    /// Population runs only: shaped bounds contain the true curve everywhere.
    truth_contained: Option<bool>,
}

#[derive(Debug, Serialize)]
struct SlackPair {
    upper: f64,
    lower: f64,
}

struct BoundsRun {
    inst: Instance,
    curve: CdfBoundCurve,
    sieve: Option<CdfBoundCurve>,
    qte: Vec<QteBounds>,
    ate: AteBounds,
}

fn needed_slack(cfg: &RunConfig, model: &qtebounds::dataset::EmpiricalModel) -> Result<Option<SlackPair>, CliError> {
    if cfg.solver == SolverChoice::Sieve {
        return Ok(None);
    }
    Ok(Some(SlackPair {
        upper: minimal_slack(model, cfg.arm, Direction::Upper, &cfg.lp)?,
        lower: minimal_slack(model, cfg.arm, Direction::Lower, &cfg.lp)?,
    }))
}

fn run_bounds(cfg: &RunConfig) -> Result<BoundsRun, CliError> {
    let inst = instance(cfg)?;
    let sampled = match cfg.solver {
        SolverChoice::Sieve => None,
        _ => Some(cdf_bound_curve_with_slack(&inst.model, &inst.eval, cfg.arm, cfg.slack, &cfg.lp)?),
    };
    let sieve = if cfg.solver.uses_sieve() {
        let spec = SieveSpec::for_model(&inst.model, cfg.sieve_order, cfg.mass_constraint)?;
        Some(sieve_bound_curve(&inst.model, &spec, cfg.arm, &inst.eval, &cfg.lp)?)
    } else {
        None
    };
    let curve = match (sampled, &sieve) {
        (Some(c), _) => c,
        (None, Some(s)) => s.clone(),
        (None, None) => unreachable!("a solver always runs"),
    };
    let qte = cfg
        .tau
        .iter()
        .map(|&t| qte_bounds(&inst.model, &curve, t))
        .collect::<Result<Vec<_>, _>>()?;
    let observed_mean = inst.model.arm_mean(cfg.arm.observed_d())?;
    let ate = ate_bounds(&curve, observed_mean, cfg.bounded_support);
    Ok(BoundsRun {
        inst,
        curve,
        sieve,
        qte,
        ate,
    })
}

fn status_name(s: PointStatus) -> &'static str {
    match s {
        PointStatus::Feasible => "feasible",
        PointStatus::Infeasible => "infeasible",
        PointStatus::Unbounded => "unbounded",
    }
}

fn curve_table(curve: &CdfBoundCurve, truth: Option<&[f64]>) -> Table {
    let mut t = Table::new(curve.grid.len());
    t.floats("y", &curve.grid)
        .optional("raw_lower", &curve.raw_lower)
        .optional("raw_upper", &curve.raw_upper)
        .floats("lower", &curve.lower)
        .floats("upper", &curve.upper)
        .column("lower_status", curve.lower_status.iter().map(|s| status_name(*s)))
        .column("upper_status", curve.upper_status.iter().map(|s| status_name(*s)))
        .column("feasible", &curve.feasible)
        .column("crossing", &curve.crossing);
    if let Some(truth) = truth {
        t.floats("true_cdf", truth);
    }
    t
}

fn gaps(sampled: &[Option<f64>], sieve: &[Option<f64>], upper: bool) -> Vec<Option<f64>> {
    sampled
        .iter()
        .zip(sieve)
        .map(|(p, s)| match (p, s) {
            (Some(p), Some(s)) => Some(if upper { p - s } else { s - p }),
            _ => None,
        })
        .collect()
}

fn max_some(v: &[Option<f64>]) -> Option<f64> {
    v.iter().flatten().copied().reduce(f64::max)
}

fn truth_contained(curve: &CdfBoundCurve, truth: &[f64], tol: f64) -> bool {
    curve
        .lower
        .iter()
        .zip(&curve.upper)
        .zip(truth)
        .all(|((l, u), t)| *l <= t + tol && *t <= u + tol)
}

fn infeasible_everywhere(curve: &CdfBoundCurve) -> bool {
    curve
        .lower_status
        .iter()
        .chain(&curve.upper_status)
        .all(|s| *s != PointStatus::Feasible)
}

pub fn bounds(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let mut out = output(cfg, force, &["curve.csv", "summary.json"])?;
    let run = run_bounds(cfg)?;
    let mut table = curve_table(&run.curve, run.inst.truth.as_deref());
    let mut sieve_summary = None;
    if let Some(s) = &run.sieve {
        let both = cfg.solver == SolverChoice::Both;
        let gu = gaps(&run.curve.raw_upper, &s.raw_upper, true);
        let gl = gaps(&run.curve.raw_lower, &s.raw_lower, false);
        if both {
            table
                .optional("sieve_raw_lower", &s.raw_lower)
                .optional("sieve_raw_upper", &s.raw_upper)
                .floats("sieve_lower", &s.lower)
                .floats("sieve_upper", &s.upper)
                .optional("gap_upper", &gu)
                .optional("gap_lower", &gl);
        }
        sieve_summary = Some(SieveSummary {
            order: cfg.sieve_order,
            mass_constraint: cfg.mass_constraint,
            solved_upper: s.raw_upper.iter().flatten().count(),
            solved_lower: s.raw_lower.iter().flatten().count(),
            max_gap_upper: if both { max_some(&gu) } else { None },
            max_gap_lower: if both { max_some(&gl) } else { None },
            mean_width: s.mean_width(),
        });
    }
    out.write_csv("curve.csv", &table)?;
    let tol = 1e-6 + cfg.lp.tol_feas;
    let summary = BoundsSummary {
        arm: cfg.arm,
        solver: cfg.solver,
        eval_points: run.curve.grid.len(),
        feasible_points: run.curve.n_feasible(),
        crossing_points: run.curve.crossing.iter().filter(|c| **c).count(),
        mean_width: run.curve.mean_width(),
        qte: run.qte,
        ate: run.ate,
        sieve: sieve_summary,
        slack: cfg.slack,
        minimal_slack: needed_slack(cfg, &run.inst.model)?,
        truth_contained: run.inst.truth.as_deref().map(|t| truth_contained(&run.curve, t, tol)),
    };
    out.write_json("summary.json", &summary)?;
    out.finish("bounds", cfg, json!({ "mean_width": summary.mean_width }))?;
    Ok(infeasible_everywhere(&run.curve).then(|| {
        let hint = match &summary.minimal_slack {
            Some(s) => format!(
                "; loosening by {:.3e} (upper) and {:.3e} (lower) restores feasibility, see --slack",
                s.upper, s.lower
            ),
            None => String::new(),
        };
        format!(
            "no bound program has a solution at any evaluation point: the dominance-preservation \
             condition is rejected in this sample{hint}"
        )
    }))
}

pub fn qte(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let mut out = output(cfg, force, &["qte.csv", "qte.json"])?;
    let run = run_bounds(cfg)?;
    let mut t = Table::new(run.qte.len());
    t.floats("tau", &run.qte.iter().map(|q| q.tau).collect::<Vec<_>>())
        .floats("observed_quantile", &run.qte.iter().map(|q| q.observed_quantile).collect::<Vec<_>>())
        .floats("counterfactual_quantile_lb", &run.qte.iter().map(|q| q.counterfactual_quantile_lb).collect::<Vec<_>>())
        .floats("counterfactual_quantile_ub", &run.qte.iter().map(|q| q.counterfactual_quantile_ub).collect::<Vec<_>>())
        .floats("qte_lb", &run.qte.iter().map(|q| q.qte_lb).collect::<Vec<_>>())
        .floats("qte_ub", &run.qte.iter().map(|q| q.qte_ub).collect::<Vec<_>>());
    out.write_csv("qte.csv", &t)?;
    out.write_json("qte.json", &json!({ "arm": cfg.arm, "qte": run.qte, "ate": run.ate }))?;
    out.finish("qte", cfg, json!({ "taus": cfg.tau.len() }))?;
    Ok(infeasible_everywhere(&run.curve)
        .then(|| "no bound program has a solution at any evaluation point".to_string()))
}

fn complier_table(c: &ComplierCdfs) -> Table {
    let mut t = Table::new(c.grid.len());
    t.floats("y", &c.grid);
    for g in &c.groups {
        let tag = format!("{}_{}", g.from_level, g.to_level);
        t.floats(&format!("y1_cdf_{tag}"), &g.y1_cdf)
            .floats(&format!("y0_cdf_{tag}"), &g.y0_cdf);
    }
    t
}

pub fn diagnose(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let files = [
        "compliers.csv",
        "compliers.json",
        "point_id.json",
        "fosd.json",
        "fosd_weights.csv",
        "fosd_witness.csv",
    ];
    let mut out = output(cfg, force, &files)?;
    let inst = instance(cfg)?;
    let compliers = complier_cdfs(&inst.model, cfg.min_complier_share)?;
    out.write_csv("compliers.csv", &complier_table(&compliers))?;
    out.write_json("compliers.json", &compliers)?;
    let pid = point_identify(&inst.model, cfg.arm, cfg.point_id_tol, &cfg.lp)?;
    out.write_json("point_id.json", &pid)?;
    let report = match fosd_preservation_test(&compliers, cfg.fosd_direction, cfg.fosd_tol, &cfg.lp) {
        Ok(r) => r,
        Err(e @ qtebounds::Error::DiagnosticUnavailable(_)) => {
            out.finish("diagnose", cfg, json!({ "fosd": "unavailable", "reason": e.to_string() }))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    out.write_json("fosd.json", &report)?;
    let mut w = Table::new(report.groups.len());
    w.column("group", 0..report.groups.len())
        .column("from_level", report.groups.iter().map(|g| g.0))
        .column("to_level", report.groups.iter().map(|g| g.1))
        .floats("omega", &report.omega)
        .floats("omega_tilde", &report.omega_tilde);
    out.write_csv("fosd_weights.csv", &w)?;
    let mut c = Table::new(report.grid.len());
    c.floats("y", &report.grid)
        .floats("premise_omega", &report.premise_omega)
        .floats("premise_omega_tilde", &report.premise_omega_tilde)
        .floats("checked_omega", &report.checked_omega)
        .floats("checked_omega_tilde", &report.checked_omega_tilde);
    out.write_csv("fosd_witness.csv", &c)?;
    out.finish(
        "diagnose",
        cfg,
        json!({
            "passed": report.passed,
            "max_violation": report.max_violation,
            "witness_y": report.witness_y,
        }),
    )?;
    Ok((!report.passed).then(|| {
        format!(
            "dominance preservation fails: violation {} at y = {}",
            fmt_f64(report.max_violation),
            fmt_f64(report.witness_y)
        )
    }))
}

pub fn violation(cfg: &RunConfig, force: bool) -> Result<Finding, CliError> {
    let mut out = output(cfg, force, &["violation.json"])?;
    let mut spec = cfg.violation.clone();
    spec.arm = cfg.arm;
    let report = violation_experiment(&cfg.dgp, &spec, &cfg.lp)?;
    out.write_json("violation.json", &report)?;
    let within = report.mean_violation <= report.bound + 2.0 * report.mc_stderr;
    out.finish(
        "violation",
        cfg,
        json!({
            "mean_violation": report.mean_violation,
            "mc_stderr": report.mc_stderr,
            "bound": report.bound,
            "within_bound": within,
        }),
    )?;
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    #[value(name = "L2")]
    L2,
    #[value(name = "L5")]
    L5,
    #[value(name = "L6")]
    L6,
    #[value(name = "all")]
    All,
}

impl Figure {
    fn levels(self) -> Vec<usize> {
        match self {
            Figure::L2 => vec![2],
            Figure::L5 => vec![5],
            Figure::L6 => vec![6],
            Figure::All => vec![2, 5, 6],
        }
    }
}

#[derive(Debug, Serialize)]
struct WidthRow {
    levels: usize,
    mean_width: f64,
    feasible_points: usize,
    /// Largest shaped upper bound over the upper half of the grid.
    max_upper_upper_half: f64,
    truth_contained: bool,
}

pub fn reproduce(cfg: &RunConfig, figure: Figure, force: bool) -> Result<Finding, CliError> {
    let levels = figure.levels();
    let mut files: Vec<String> = levels.iter().map(|l| format!("figure_L{l}.csv")).collect();
    files.push("widths.csv".into());
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    let mut out = output(cfg, force, &names)?;
    let mut rows = Vec::new();
    for &l in &levels {
        let mut run_cfg = cfg.clone();
        run_cfg.dgp.levels = l;
        run_cfg.population = true;
        let (model, eval) = population_instance(&run_cfg.dgp, &run_cfg.population_grid)?;
        let truth = true_counterfactual_cdf(&run_cfg.dgp, &eval, cfg.arm);
        let curve = cdf_bound_curve(&model, &eval, cfg.arm, &cfg.lp)?;
        out.write_csv(&format!("figure_L{l}.csv"), &curve_table(&curve, Some(&truth)))?;
        let half = eval.len() / 2;
        rows.push(WidthRow {
            levels: l,
            mean_width: curve.mean_width(),
            feasible_points: curve.n_feasible(),
            max_upper_upper_half: curve.upper[half..].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            truth_contained: truth_contained(&curve, &truth, 1e-6 + cfg.lp.tol_feas),
        });
        log::info!("L = {l}: mean width {:.4}", curve.mean_width());
    }
    let mut t = Table::new(rows.len());
    t.column("levels", rows.iter().map(|r| r.levels))
        .floats("mean_width", &rows.iter().map(|r| r.mean_width).collect::<Vec<_>>())
        .column("feasible_points", rows.iter().map(|r| r.feasible_points))
        .floats("max_upper_upper_half", &rows.iter().map(|r| r.max_upper_upper_half).collect::<Vec<_>>())
        .column("truth_contained", rows.iter().map(|r| r.truth_contained));
    out.write_csv("widths.csv", &t)?;
    out.finish("reproduce", cfg, json!({ "widths": rows }))?;
    Ok(None)
}
