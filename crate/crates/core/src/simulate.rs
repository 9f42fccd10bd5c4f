//! Threshold-crossing data-generating process with a binomial instrument and
//! its closed-form population counterpart.
//!
//! `(U, eta)` is standard bivariate normal with correlation `rho`,
//! `xi1 ~ N(0, sigma_xi^2)`, `V ~ N(0, sigma_v^2)`, `xi0 = xi1 + V`,
//! `U_d = U + xi_d`, `Z = Bin(L-1, binom_p)/(L-1)`,
//! `D = 1{pi0 + pi1 Z >= eta}`, `Y1 = 2 U1`, `Y0 = 1 + U0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, CdfKind, EmpiricalModel, InstrumentSupport, Observation, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub rho: f64,
    pub sigma_xi: f64,
    pub sigma_v: f64,
    pub pi0: f64,
    pub pi1: f64,
    pub binom_p: f64,
    /// Number of instrument levels `L`.
    pub levels: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            rho: 0.5,
            sigma_xi: 0.3,
            sigma_v: 0.4,
            pi0: -0.5,
            pi1: 1.0,
            binom_p: 0.5,
            levels: 6,
            n: 100_000,
            seed: 20_240_101,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("rho", self.rho),
            ("sigma_xi", self.sigma_xi),
            ("sigma_v", self.sigma_v),
            ("pi0", self.pi0),
            ("pi1", self.pi1),
            ("binom_p", self.binom_p),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::config("rho", format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.sigma_xi < 0.0 {
            return Err(Error::config("sigma_xi", "must be nonnegative"));
        }
        if self.sigma_v < 0.0 {
            return Err(Error::config("sigma_v", "must be nonnegative"));
        }
        if !(self.binom_p > 0.0 && self.binom_p < 1.0) {
            return Err(Error::config("binom_p", "must lie strictly between 0 and 1"));
        }
        if self.levels < 2 {
            return Err(Error::config("levels", "need at least 2 instrument levels"));
        }
        Ok(())
    }

    /// Instrument support `l/(L-1)`, `l = 0..L-1`.
    pub fn support(&self) -> Vec<f64> {
        let top = (self.levels - 1) as f64;
        (0..self.levels).map(|l| l as f64 / top).collect()
    }

    /// Binomial probabilities of each instrument level.
    pub fn level_weights(&self) -> Vec<f64> {
        let m = (self.levels - 1) as u64;
        let p = self.binom_p;
        let mut out = Vec::with_capacity(self.levels);
        let mut choose = 1.0f64;
        for k in 0..=m {
            if k > 0 {
                choose *= (m - k + 1) as f64 / k as f64;
            }
            out.push(choose * p.powi(k as i32) * (1.0 - p).powi((m - k) as i32));
        }
        out
    }

    /// Selection thresholds `pi0 + pi1 z_l`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.support().iter().map(|z| self.pi0 + self.pi1 * z).collect()
    }

    pub fn propensities(&self) -> Vec<f64> {
        self.thresholds().into_iter().map(norm_cdf).collect()
    }

    /// Standard deviation of `U_d`.
    fn scale(&self, d: usize) -> f64 {
        let base = 1.0 + self.sigma_xi * self.sigma_xi;
        if d == 1 {
            base.sqrt()
        } else {
            (base + self.sigma_v * self.sigma_v).sqrt()
        }
    }

    /// Standardized potential outcome `Y_d` and its correlation with `eta`.
    fn standardize(&self, d: usize, y: f64) -> (f64, f64) {
        let s = self.scale(d);
        let x = if d == 1 { y / (2.0 * s) } else { (y - 1.0) / s };
        (x, self.rho / s)
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P[A <= x, B <= y]` for standard bivariate normal `(A, B)` with correlation `rho`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvnd(-x, -y, rho).clamp(0.0, 1.0)
}

const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197),
];

const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];

const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

/// Upper orthant `P[A > h, B > k]` by Drezner-Wesolowsky quadrature with
/// Genz's double-precision refinements.
fn bvnd(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r != 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = r.asin();
            for &(w, x) in quad {
                for sgn in [-1.0, 1.0] {
                    let sn = (asr * (sgn * x + 1.0) / 2.0).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * two_pi);
        }
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -(b_s / a_s + hk) / 2.0;
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = b_s.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x) in quad {
            for sgn in [-1.0, 1.0] {
                let xs = (a * (sgn * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(b_s / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * xs / (2.0 * (1.0 + rs) * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else if h >= k {
        -bvn
    } else if h < 0.0 {
        norm_cdf(k) - norm_cdf(h) - bvn
    } else {
        norm_cdf(-h) - norm_cdf(-k) - bvn
    }
}

/// Draws `config.n` units with a generator seeded from `config.seed`.
pub fn draw_sample(config: &DgpConfig) -> Result<Sample> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    draw_sample_with(config, config.n, &mut rng)
}

pub fn draw_sample_with<R: Rng + ?Sized>(
    config: &DgpConfig,
    n: usize,
    rng: &mut R,
) -> Result<Sample> {
    config.validate()?;
    if n == 0 {
        return Err(Error::config("n", "sample size must be positive"));
    }
    let trials = (config.levels - 1) as u64;
    let binom = Binomial::new(trials, config.binom_p)
        .map_err(|e| Error::config("binom_p", e.to_string()))?;
    let thresholds = config.thresholds();
    let r_c = (1.0 - config.rho * config.rho).sqrt();
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let u = a;
        let eta = config.rho * a + r_c * b;
        let e1: f64 = rng.sample(StandardNormal);
        let ev: f64 = rng.sample(StandardNormal);
        let xi1 = config.sigma_xi * e1;
        let xi0 = xi1 + config.sigma_v * ev;
        let level = binom.sample(rng) as usize;
        let d = u8::from(thresholds[level] >= eta);
        let y = if d == 1 { 2.0 * (u + xi1) } else { 1.0 + u + xi0 };
        obs.push(Observation { y, d, level });
    }
    Sample::new(obs, InstrumentSupport::new(config.support())?, None)
}

/// Writes a sample in the `y,d,z` CSV layout read by `dataset::load_csv`.
pub fn write_sample_csv<W: Write>(sample: &Sample, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y", "d", "z"])?;
    let levels = sample.support().levels();
    for o in sample.observations() {
        w.write_record([o.y.to_string(), o.d.to_string(), levels[o.level].to_string()])?;
    }
    w.flush()
}

/// `P[Y <= y, D = d | Z = z_l]`.
pub fn joint_subcdf(config: &DgpConfig, d: usize, level: usize, y: f64) -> f64 {
    let c = config.pi0 + config.pi1 * config.support()[level];
    joint_at_threshold(config, d, c, y)
}

fn joint_at_threshold(config: &DgpConfig, d: usize, c: f64, y: f64) -> f64 {
    let (x, r) = config.standardize(d, y);
    if d == 1 {
        bvn_cdf(x, c, r)
    } else {
        (norm_cdf(x) - bvn_cdf(x, c, r)).max(0.0)
    }
}

/// `P[Y <= y | D = d]`.
pub fn observed_cdf(config: &DgpConfig, d: usize, y: f64) -> f64 {
    let w = config.level_weights();
    let c = config.thresholds();
    let mut num = 0.0;
    let mut den = 0.0;
    for l in 0..config.levels {
        let p = norm_cdf(c[l]);
        num += w[l] * joint_at_threshold(config, d, c[l], y);
        den += w[l] * if d == 1 { p } else { 1.0 - p };
    }
    num / den
}

/// `P[Y <= y]` pooled over treatment status and instrument.
pub fn pooled_cdf(config: &DgpConfig, y: f64) -> f64 {
    let w = config.level_weights();
    let c = config.thresholds();
    (0..config.levels)
        .map(|l| w[l] * (joint_at_threshold(config, 1, c[l], y) + joint_at_threshold(config, 0, c[l], y)))
        .sum()
}

/// True counterfactual CDF at one point: `F_{Y0|D=1}` for the treated arm,
/// `F_{Y1|D=0}` for the untreated arm.
pub fn counterfactual_cdf_at(config: &DgpConfig, arm: Arm, y: f64) -> f64 {
    let w = config.level_weights();
    let c = config.thresholds();
    let mut num = 0.0;
    let mut den = 0.0;
    match arm {
        Arm::Treated => {
            let (x, r) = config.standardize(0, y);
            for l in 0..config.levels {
                num += w[l] * bvn_cdf(x, c[l], r);
                den += w[l] * norm_cdf(c[l]);
            }
        }
        Arm::Untreated => {
            let (x, r) = config.standardize(1, y);
            for l in 0..config.levels {
                num += w[l] * (norm_cdf(x) - bvn_cdf(x, c[l], r));
                den += w[l] * (1.0 - norm_cdf(c[l]));
            }
        }
    }
    (num / den).clamp(0.0, 1.0)
}

pub fn true_counterfactual_cdf(config: &DgpConfig, grid: &[f64], arm: Arm) -> Vec<f64> {
    grid.iter().map(|&y| counterfactual_cdf_at(config, arm, y)).collect()
}

/// `E[Y_d | D = s]` from the normal selection formula
/// `E[U_d | eta <= c] = -rho phi(c) / Phi(c)`.
pub fn potential_mean(config: &DgpConfig, d: usize, s: usize) -> f64 {
    let w = config.level_weights();
    let c = config.thresholds();
    let mut num = 0.0;
    let mut den = 0.0;
    for l in 0..config.levels {
        let p = norm_cdf(c[l]);
        if s == 1 {
            num -= w[l] * config.rho * norm_pdf(c[l]);
            den += w[l] * p;
        } else {
            num += w[l] * config.rho * norm_pdf(c[l]);
            den += w[l] * (1.0 - p);
        }
    }
    let eu = num / den;
    if d == 1 {
        2.0 * eu
    } else {
        1.0 + eu
    }
}

fn invert(f: impl Fn(f64) -> f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn pooled_quantile(config: &DgpConfig, p: f64) -> f64 {
    invert(|y| pooled_cdf(config, y), p)
}

pub fn observed_quantile(config: &DgpConfig, d: usize, tau: f64) -> f64 {
    invert(|y| observed_cdf(config, d, y), tau)
}

pub fn counterfactual_quantile(config: &DgpConfig, arm: Arm, tau: f64) -> f64 {
    invert(|y| counterfactual_cdf_at(config, arm, y), tau)
}

/// Grid settings for population instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationGrid {
    /// Equispaced constraint points between the pooled `tail_mass` and
    /// `1 - tail_mass` quantiles.
    pub constraint_points: usize,
    pub tail_mass: f64,
    /// Evaluation points at pooled quantiles `(k+1)/(K+1)`.
    pub eval_points: usize,
}

impl Default for PopulationGrid {
    fn default() -> Self {
        PopulationGrid {
            constraint_points: 600,
            tail_mass: 1e-5,
            eval_points: 101,
        }
    }
}

pub fn population_eval_grid(config: &DgpConfig, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| pooled_quantile(config, (i + 1) as f64 / (k + 1) as f64))
        .collect()
}

pub fn population_constraint_grid(config: &DgpConfig, points: usize, tail_mass: f64) -> Vec<f64> {
    let lo = pooled_quantile(config, tail_mass);
    let hi = pooled_quantile(config, 1.0 - tail_mass);
    if points < 2 {
        return vec![lo, hi];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// A population model on the constraint grid merged with the evaluation
/// grid, together with that evaluation grid.
pub fn population_instance(
    config: &DgpConfig,
    spec: &PopulationGrid,
) -> Result<(EmpiricalModel, Vec<f64>)> {
    config.validate()?;
    if !(spec.tail_mass > 0.0 && spec.tail_mass < 0.5) {
        return Err(Error::config("tail_mass", "must lie in (0, 0.5)"));
    }
    let eval = population_eval_grid(config, spec.eval_points);
    let mut grid = population_constraint_grid(config, spec.constraint_points, spec.tail_mass);
    grid.extend_from_slice(&eval);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok((population_model(config, &grid)?, eval))
}

/// Every field of an `EmpiricalModel` evaluated analytically on `grid`.
pub fn population_model(config: &DgpConfig, grid: &[f64]) -> Result<EmpiricalModel> {
    config.validate()?;
    let mut grid = grid.to_vec();
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("population grid must be nonempty and finite".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let w = config.level_weights();
    let c = config.thresholds();
    let propensity: Vec<f64> = c.iter().map(|&v| norm_cdf(v)).collect();
    let joint: [Vec<Vec<f64>>; 2] = [0, 1].map(|d| {
        c.iter()
            .map(|&cl| grid.iter().map(|&y| joint_at_threshold(config, d, cl, y)).collect())
            .collect()
    });
    let marginal = [0, 1].map(|d| {
        let den: f64 = (0..config.levels)
            .map(|l| w[l] * if d == 1 { propensity[l] } else { 1.0 - propensity[l] })
            .sum();
        let col: Vec<f64> = (0..grid.len())
            .map(|k| (0..config.levels).map(|l| w[l] * joint[d][l][k]).sum::<f64>() / den)
            .collect();
        Some(col)
    });
    Ok(EmpiricalModel {
        y_range: (grid[0], grid[grid.len() - 1]),
        y_grid: grid,
        levels: config.support(),
        propensity,
        joint_subcdf: joint,
        marginal_cdf: marginal,
        level_weights: w,
        n_per_level: None,
        kind: CdfKind::Continuous,
    })
}
