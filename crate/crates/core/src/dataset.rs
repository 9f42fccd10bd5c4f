//! Observational data and the empirical probability objects built from it.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which counterfactual distribution is being bounded.
///
/// `Treated` targets the untreated outcome of the treated, `F_{Y0|D=1}`;
/// `Untreated` targets the treated outcome of the untreated, `F_{Y1|D=0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Untreated,
}

impl Arm {
    /// Treatment status of the people whose counterfactual is bounded.
    pub fn observed_d(self) -> usize {
        match self {
            Arm::Treated => 1,
            Arm::Untreated => 0,
        }
    }

    /// Treatment status whose potential outcome is unobserved for that group.
    pub fn counterfactual_d(self) -> usize {
        1 - self.observed_d()
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "treated" => Ok(Arm::Treated),
            "untreated" => Ok(Arm::Untreated),
            other => Err(Error::Argument(format!(
                "unknown arm `{other}` (expected treated or untreated)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSupport {
    levels: Vec<f64>,
}

impl InstrumentSupport {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Support(format!(
                "need at least 2 instrument levels, found {}",
                levels.len()
            )));
        }
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Support("instrument levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Support("instrument levels must be strictly increasing".into()));
        }
        Ok(InstrumentSupport { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, z: f64) -> Option<usize> {
        self.levels.iter().position(|&v| v == z)
    }
}

/// One unit. `level` is the 0-based index into the instrument support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub d: u8,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    observations: Vec<Observation>,
    support: InstrumentSupport,
    cell_label: Option<String>,
}

impl Sample {
    pub fn new(
        observations: Vec<Observation>,
        support: InstrumentSupport,
        cell_label: Option<String>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Argument("sample has no observations".into()));
        }
        for (i, o) in observations.iter().enumerate() {
            if !o.y.is_finite() {
                return Err(Error::Argument(format!("observation {i}: y is not finite")));
            }
            if o.d > 1 {
                return Err(Error::Argument(format!("observation {i}: d must be 0 or 1")));
            }
            if o.level >= support.len() {
                return Err(Error::Argument(format!(
                    "observation {i}: instrument level {} outside support of size {}",
                    o.level,
                    support.len()
                )));
            }
        }
        Ok(Sample {
            observations,
            support,
            cell_label,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn support(&self) -> &InstrumentSupport {
        &self.support
    }

    pub fn cell_label(&self) -> Option<&str> {
        self.cell_label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.support.len()];
        for o in &self.observations {
            counts[o.level] += 1;
        }
        counts
    }

    /// Sorted outcomes of all observations.
    pub fn sorted_y(&self) -> Vec<f64> {
        let mut ys: Vec<f64> = self.observations.iter().map(|o| o.y).collect();
        ys.sort_by(f64::total_cmp);
        ys
    }

    /// `K` pooled-sample quantiles at probabilities `k/(K-1)`, using the left
    /// inverse of the empirical CDF. Duplicates are removed.
    pub fn pooled_quantiles(&self, k: usize) -> Vec<f64> {
        quantile_grid(&self.sorted_y(), k)
    }
}

fn quantile_grid(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut grid: Vec<f64> = if k <= 1 {
        vec![sorted[n - 1]]
    } else {
        (0..k)
            .map(|i| {
                let p = i as f64 / (k - 1) as f64;
                let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
                sorted[idx]
            })
            .collect()
    };
    grid.dedup();
    grid
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub y: String,
    pub d: String,
    pub z: String,
    /// Keep only rows whose `column` equals `value`.
    #[serde(default)]
    pub cell: Option<CellFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFilter {
    pub column: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            y: "y".into(),
            d: "d".into(),
            z: "z".into(),
            cell: None,
        }
    }
}

pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<Sample> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, columns)
}

pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}` in header"),
        })
    };
    let iy = find(&columns.y)?;
    let id = find(&columns.d)?;
    let iz = find(&columns.z)?;
    let icell = match &columns.cell {
        Some(c) => Some((find(&c.column)?, c.value.as_str())),
        None => None,
    };

    let mut raw: Vec<(f64, u8, f64)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            match record.get(i) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::Parse {
                    line,
                    message: format!("row is missing field `{name}`"),
                }),
            }
        };
        if let Some((ic, value)) = icell {
            if field(ic, "cell")? != value {
                continue;
            }
        }
        let number = |i: usize, name: &str| -> Result<f64> {
            let s = field(i, name)?;
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("field `{name}` is not a number: `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("field `{name}` is not finite"),
                });
            }
            Ok(v)
        };
        let y = number(iy, &columns.y)?;
        let d = number(id, &columns.d)?;
        let z = number(iz, &columns.z)?;
        let d = if d == 0.0 {
            0
        } else if d == 1.0 {
            1
        } else {
            return Err(Error::Parse {
                line,
                message: format!("treatment `{}` must be 0 or 1, found {d}", columns.d),
            });
        };
        raw.push((y, d, z));
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let mut levels: Vec<f64> = raw.iter().map(|r| r.2).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let support = InstrumentSupport::new(levels)?;
    let observations = raw
        .into_iter()
        .map(|(y, d, z)| Observation {
            y,
            d,
            level: support.index_of(z).expect("level drawn from the data"),
        })
        .collect();
    Sample::new(
        observations,
        support,
        columns.cell.as_ref().map(|c| c.value.clone()),
    )
}

/// Which points the estimated CDFs are evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPolicy {
    /// Every distinct outcome value in the sample.
    AllUnique,
    /// `K` pooled-sample quantiles at equispaced probabilities.
    Quantiles(usize),
    /// A caller-supplied grid; sorted and deduplicated before use.
    Explicit(Vec<f64>),
}

/// Whether values between grid points follow a right-continuous step
/// (empirical CDFs) or linear interpolation (smooth population CDFs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfKind {
    Step,
    Continuous,
}

/// Everything the bound programs read from the data.
///
/// `joint_subcdf[d][l][k]` is `P[Y <= y_k, D = d | Z = z_l]` and
/// `marginal_cdf[d][k]` is `P[Y <= y_k | D = d]`, `None` when no unit has
/// treatment `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModel {
    pub y_grid: Vec<f64>,
    pub levels: Vec<f64>,
    pub propensity: Vec<f64>,
    pub joint_subcdf: [Vec<Vec<f64>>; 2],
    pub marginal_cdf: [Option<Vec<f64>>; 2],
    /// `P[Z = z_l]`.
    pub level_weights: Vec<f64>,
    pub n_per_level: Option<Vec<usize>>,
    pub kind: CdfKind,
    /// Smallest and largest outcome the CDFs are defined over.
    pub y_range: (f64, f64),
}

impl EmpiricalModel {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn marginal(&self, d: usize) -> Result<&[f64]> {
        self.marginal_cdf[d]
            .as_deref()
            .ok_or_else(|| Error::Stratum(format!("no observations with d = {d}")))
    }

    /// Probability of treatment status `d` at each level.
    pub fn status_prob(&self, d: usize) -> Vec<f64> {
        if d == 1 {
            self.propensity.clone()
        } else {
            self.propensity.iter().map(|p| 1.0 - p).collect()
        }
    }

    pub fn joint_at(&self, d: usize, level: usize, y: f64) -> f64 {
        value_at(&self.y_grid, &self.joint_subcdf[d][level], self.kind, y)
    }

    pub fn marginal_at(&self, d: usize, y: f64) -> Result<f64> {
        Ok(value_at(&self.y_grid, self.marginal(d)?, self.kind, y))
    }

    /// `E[Y | D = d]` implied by the marginal CDF on the grid, with the grid
    /// range taken as the outcome support.
    pub fn arm_mean(&self, d: usize) -> Result<f64> {
        let f = self.marginal(d)?;
        let g = &self.y_grid;
        let top = g[g.len() - 1];
        let area: f64 = match self.kind {
            CdfKind::Step => g.windows(2).zip(f).map(|(w, v)| (w[1] - w[0]) * v).sum(),
            CdfKind::Continuous => trapezoid(g, f),
        };
        Ok(top - area)
    }

    /// First grid point where the marginal CDF of arm `d` reaches `tau`.
    pub fn arm_quantile(&self, d: usize, tau: f64) -> Result<f64> {
        let f = self.marginal(d)?;
        Ok(f.iter()
            .position(|&v| v >= tau)
            .map_or(self.y_grid[self.y_grid.len() - 1], |k| self.y_grid[k]))
    }

    /// Checks that every stored curve is monotone and stays in its range, up to `tol`.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let k = self.y_grid.len();
        if self.y_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err("grid is not strictly increasing".into());
        }
        for d in 0..2 {
            let cap = self.status_prob(d);
            for (l, col) in self.joint_subcdf[d].iter().enumerate() {
                if col.len() != k {
                    return Err(format!("joint_subcdf[{d}][{l}] has wrong length"));
                }
                if col.windows(2).any(|w| w[1] < w[0] - tol) {
                    return Err(format!("joint_subcdf[{d}][{l}] decreases"));
                }
                if col.iter().any(|&v| v < -tol || v > cap[l] + tol) {
                    return Err(format!("joint_subcdf[{d}][{l}] leaves [0, P[D={d}|z]]"));
                }
            }
            if let Some(m) = &self.marginal_cdf[d] {
                if m.windows(2).any(|w| w[1] < w[0] - tol) {
                    return Err(format!("marginal_cdf[{d}] decreases"));
                }
                if m.iter().any(|&v| v < -tol || v > 1.0 + tol) {
                    return Err(format!("marginal_cdf[{d}] leaves [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(w, v)| 0.5 * (w[1] - w[0]) * (v[0] + v[1]))
        .sum()
}

/// Evaluates a grid function at `y`.
pub fn value_at(grid: &[f64], values: &[f64], kind: CdfKind, y: f64) -> f64 {
    let idx = grid.partition_point(|&g| g <= y);
    match kind {
        CdfKind::Step => {
            if idx == 0 {
                0.0
            } else {
                values[idx - 1]
            }
        }
        CdfKind::Continuous => {
            if idx == 0 {
                values[0]
            } else if idx == grid.len() {
                values[grid.len() - 1]
            } else {
                let (x0, x1) = (grid[idx - 1], grid[idx]);
                let t = (y - x0) / (x1 - x0);
                values[idx - 1] + t * (values[idx] - values[idx - 1])
            }
        }
    }
}

pub fn resolve_grid(sample: &Sample, policy: &GridPolicy) -> Result<Vec<f64>> {
    let grid = match policy {
        GridPolicy::AllUnique => {
            let mut ys = sample.sorted_y();
            ys.dedup();
            ys
        }
        GridPolicy::Quantiles(k) => {
            if *k == 0 {
                return Err(Error::Argument("quantile grid needs K >= 1".into()));
            }
            sample.pooled_quantiles(*k)
        }
        GridPolicy::Explicit(points) => {
            let mut g = points.clone();
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("explicit grid must be nonempty and finite".into()));
            }
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        }
    };
    Ok(grid)
}

/// Counts every empirical probability object on the grid chosen by `policy`.
pub fn estimate(sample: &Sample, policy: &GridPolicy) -> Result<EmpiricalModel> {
    let grid = resolve_grid(sample, policy)?;
    let n_levels = sample.support().len();
    let counts = sample.level_counts();
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Stratum(format!(
            "instrument level {} (z = {}) has no observations",
            l,
            sample.support().levels()[l]
        )));
    }

    let mut obs: Vec<Observation> = sample.observations().to_vec();
    obs.sort_by(|a, b| a.y.total_cmp(&b.y));

    let mut treated = vec![0usize; n_levels];
    for o in &obs {
        treated[o.level] += o.d as usize;
    }
    let n_d = [
        obs.len() - treated.iter().sum::<usize>(),
        treated.iter().sum::<usize>(),
    ];
    let propensity: Vec<f64> = treated
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| t as f64 / c as f64)
        .collect();
    for (l, p) in propensity.iter().enumerate() {
        if *p <= 0.0 || *p >= 1.0 {
            log::warn!("degenerate propensity {p} at instrument level {l}");
        }
    }

    let mut joint = [
        vec![Vec::with_capacity(grid.len()); n_levels],
        vec![Vec::with_capacity(grid.len()); n_levels],
    ];
    let mut marg: [Vec<f64>; 2] = [
        Vec::with_capacity(grid.len()),
        Vec::with_capacity(grid.len()),
    ];
    let mut cum = [vec![0usize; n_levels], vec![0usize; n_levels]];
    let mut cum_d = [0usize; 2];
    let mut next = 0;
    for &g in &grid {
        while next < obs.len() && obs[next].y <= g {
            let o = obs[next];
            cum[o.d as usize][o.level] += 1;
            cum_d[o.d as usize] += 1;
            next += 1;
        }
        for d in 0..2 {
            for l in 0..n_levels {
                joint[d][l].push(cum[d][l] as f64 / counts[l] as f64);
            }
            if n_d[d] > 0 {
                marg[d].push(cum_d[d] as f64 / n_d[d] as f64);
            }
        }
    }
    let [m0, m1] = marg;
    let marginal_cdf = [
        (n_d[0] > 0).then_some(m0),
        (n_d[1] > 0).then_some(m1),
    ];
    let n = obs.len() as f64;
    Ok(EmpiricalModel {
        y_range: (obs[0].y, obs[obs.len() - 1].y),
        y_grid: grid,
        levels: sample.support().levels().to_vec(),
        propensity,
        joint_subcdf: joint,
        marginal_cdf,
        level_weights: counts.iter().map(|&c| c as f64 / n).collect(),
        n_per_level: Some(counts),
        kind: CdfKind::Step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_from(rows: &[(f64, u8, usize)], levels: Vec<f64>) -> Sample {
        let obs = rows
            .iter()
            .map(|&(y, d, level)| Observation { y, d, level })
            .collect();
        Sample::new(obs, InstrumentSupport::new(levels).unwrap(), None).unwrap()
    }

    #[test]
    fn csv_readback() {
        let text = "y,d,z\n1.0,1,0\n2.0,0,0\n3.0,1,1\n";
        let s = read_csv(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.support().levels(), &[0.0, 1.0]);
        assert_eq!(s.observations()[2].level, 1);
    }

    #[test]
    fn csv_missing_field_names_line() {
        let text = "y,d,z\n1.0,1,0\n2.0,,0\n";
        match read_csv(text.as_bytes(), &ColumnMap::default()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains('d'));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = "y,d,z\n1.0,1\n";
        assert!(matches!(
            read_csv(short.as_bytes(), &ColumnMap::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_single_level_is_support_error() {
        let text = "y,d,z\n1.0,1,0\n2.0,0,0\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &ColumnMap::default()),
            Err(Error::Support(_))
        ));
    }

    #[test]
    fn csv_cell_filter_and_remap() {
        let text = "out,treat,inst,g\n1,1,0,a\n2,0,1,b\n3,0,0,a\n4,1,1,a\n";
        let cols = ColumnMap {
            y: "out".into(),
            d: "treat".into(),
            z: "inst".into(),
            cell: Some(CellFilter {
                column: "g".into(),
                value: "a".into(),
            }),
        };
        let s = read_csv(text.as_bytes(), &cols).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.cell_label(), Some("a"));
    }

    #[test]
    fn counting_example() {
        let s = sample_from(&[(1.0, 1, 0), (2.0, 0, 0), (3.0, 1, 1)], vec![0.0, 1.0]);
        let m = estimate(&s, &GridPolicy::AllUnique).unwrap();
        assert_eq!(m.propensity, vec![0.5, 1.0]);
        assert_eq!(m.joint_at(1, 0, 1.0), 0.5);
        assert_eq!(m.joint_at(0, 0, 2.0), 0.5);
        assert_eq!(m.marginal_at(1, 3.0).unwrap(), 1.0);
        for l in 0..2 {
            let top = m.y_grid.len() - 1;
            assert_eq!(m.joint_subcdf[1][l][top] + m.joint_subcdf[0][l][top], 1.0);
        }
        m.check_invariants(0.0).unwrap();
    }

    #[test]
    fn missing_stratum_only_fails_on_request() {
        let s = sample_from(&[(1.0, 1, 0), (2.0, 1, 1)], vec![0.0, 1.0]);
        let m = estimate(&s, &GridPolicy::AllUnique).unwrap();
        assert!(m.marginal(1).is_ok());
        assert!(matches!(m.marginal(0), Err(Error::Stratum(_))));
    }

    #[test]
    fn empty_level_is_stratum_error() {
        let s = sample_from(&[(1.0, 1, 0), (2.0, 0, 0)], vec![0.0, 1.0]);
        assert!(matches!(estimate(&s, &GridPolicy::AllUnique), Err(Error::Stratum(_))));
    }

    #[test]
    fn quantile_grid_uses_left_inverse() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_grid(&sorted, 3), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn value_lookup_kinds() {
        let g = [0.0, 1.0, 2.0];
        let v = [0.1, 0.5, 0.9];
        assert_eq!(value_at(&g, &v, CdfKind::Step, -1.0), 0.0);
        assert_eq!(value_at(&g, &v, CdfKind::Step, 1.5), 0.5);
        assert!((value_at(&g, &v, CdfKind::Continuous, 1.5) - 0.7).abs() < 1e-15);
        assert_eq!(value_at(&g, &v, CdfKind::Continuous, 3.0), 0.9);
    }

    #[test]
    fn arm_from_str() {
        assert_eq!("treated".parse::<Arm>().unwrap(), Arm::Treated);
        assert!("both".parse::<Arm>().is_err());
    }
}
