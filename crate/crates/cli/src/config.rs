use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qtebounds::dataset::{Arm, ColumnMap, GridPolicy};
use qtebounds::diagnostics::{FosdDirection, ViolationSpec, DEFAULT_MIN_SHARE};
use qtebounds::lp::SolverOptions;
use qtebounds::simulate::{DgpConfig, PopulationGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Sampled,
    Sieve,
    Both,
}

impl SolverChoice {
    pub fn uses_sieve(self) -> bool {
        matches!(self, SolverChoice::Sieve | SolverChoice::Both)
    }
}

/// Every setting a command reads. Loaded from the JSON config file, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Use the analytic population model of `dgp` instead of data.
    pub population: bool,
    pub dgp: DgpConfig,
    pub population_grid: PopulationGrid,
    /// Points at which the sampled program imposes its constraints.
    pub constraint_grid: GridPolicy,
    /// Size of the evaluation grid the curves are reported on.
    pub eval_points: usize,
    pub arm: Arm,
    pub tau: Vec<f64>,
    pub solver: SolverChoice,
    pub sieve_order: usize,
    pub mass_constraint: bool,
    /// Uniform loosening of the sampled program's grid constraints.
    pub slack: f64,
    /// Treat the grid endpoints as the outcome support when integrating.
    pub bounded_support: bool,
    pub min_complier_share: f64,
    pub fosd_direction: FosdDirection,
    pub fosd_tol: f64,
    pub point_id_tol: f64,
    pub violation: ViolationSpec,
    pub lp: SolverOptions,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: ColumnMap::default(),
            population: false,
            dgp: DgpConfig::default(),
            population_grid: PopulationGrid::default(),
            constraint_grid: GridPolicy::AllUnique,
            eval_points: 101,
            arm: Arm::Treated,
            tau: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            solver: SolverChoice::Sampled,
            sieve_order: 160,
            mass_constraint: true,
            slack: 0.0,
            bounded_support: true,
            min_complier_share: DEFAULT_MIN_SHARE,
            fosd_direction: FosdDirection::S1,
            fosd_tol: 1e-6,
            point_id_tol: 1e-6,
            violation: ViolationSpec::default(),
            lp: SolverOptions::default(),
            output: PathBuf::from("out"),
        }
    }
}

/// Flag values that override the config file when present.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub solver: Option<SolverChoice>,
    pub grid: Option<usize>,
    pub tau: Option<Vec<f64>>,
    pub order: Option<usize>,
    pub arm: Option<Arm>,
    pub population: bool,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub n: Option<usize>,
    pub no_mass_constraint: bool,
    pub slack: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.input {
            self.input = Some(v);
        }
        if let Some(v) = o.output {
            self.output = v;
        }
        if let Some(v) = o.solver {
            self.solver = v;
        }
        if let Some(v) = o.grid {
            self.eval_points = v;
            self.population_grid.eval_points = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.order {
            self.sieve_order = v;
        }
        if let Some(v) = o.arm {
            self.arm = v;
        }
        if o.population {
            self.population = true;
        }
        if let Some(v) = o.seed {
            self.dgp.seed = v;
            self.violation.seed = v;
        }
        if let Some(v) = o.levels {
            self.dgp.levels = v;
        }
        if let Some(v) = o.n {
            self.dgp.n = v;
        }
        if o.no_mass_constraint {
            self.mass_constraint = false;
        }
        if let Some(v) = o.slack {
            self.slack = v;
        }
        self.population_grid.eval_points = self.eval_points;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dgp.validate()?;
        if self.eval_points < 2 {
            return Err(CliError::field("eval_points", "need at least 2 evaluation points"));
        }
        if self.solver.uses_sieve() && self.sieve_order < 1 {
            return Err(CliError::field("sieve_order", "the sieve solver needs J >= 1"));
        }
        if let Some(t) = self.tau.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(CliError::field("tau", format!("every tau must lie in (0, 1), got {t}")));
        }
        if !(self.min_complier_share > 0.0 && self.min_complier_share < 1.0) {
            return Err(CliError::field("min_complier_share", "must lie in (0, 1)"));
        }
        if !(self.fosd_tol >= 0.0) {
            return Err(CliError::field("fosd_tol", "must be nonnegative"));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(CliError::field("slack", "must be finite and nonnegative"));
        }
        if !(self.point_id_tol >= 0.0) {
            return Err(CliError::field("point_id_tol", "must be nonnegative"));
        }
        if let GridPolicy::Quantiles(k) = self.constraint_grid {
            if k < 2 {
                return Err(CliError::field("constraint_grid", "need at least 2 quantiles"));
            }
        }
        Ok(())
    }

    /// Data commands need either an input file or the population flag.
    pub fn require_data(&self) -> Result<(), CliError> {
        if !self.population && self.input.is_none() {
            return Err(CliError::Usage(
                "no data source: pass --input PATH or --population".into(),
            ));
        }
        Ok(())
    }
}
