//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use qtebounds::lp::{LpProblem, VarBound};
use qtebounds::simulate::{norm_cdf, norm_pdf, DgpConfig};

/// Half-width of the box added to every generated LP so that feasible
/// instances always attain their optimum at a vertex.
pub const BOX: f64 = 10.0;

/// Builds a small LP from integer data. Every variable gets `|x_j| <= BOX`
/// rows (only the upper one for nonnegative variables).
pub fn build_lp(
    free: &[bool],
    c: &[i32],
    eqs: &[(Vec<i32>, i32)],
    ges: &[(Vec<i32>, i32)],
) -> LpProblem {
    let n = c.len();
    let f = |v: &[i32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut lp = LpProblem::new(n).with_objective(f(c));
    for (j, &is_free) in free.iter().enumerate() {
        if is_free {
            lp.set_free(j);
        }
    }
    for (r, b) in eqs {
        lp.add_eq(f(r), *b as f64);
    }
    for (r, h) in ges {
        lp.add_ge(f(r), *h as f64);
    }
    add_box(&mut lp);
    lp
}

pub fn add_box(lp: &mut LpProblem) {
    let n = lp.n_vars;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        lp.add_le(e.clone(), BOX);
        if lp.var_bounds[j] == VarBound::Free {
            lp.add_ge(e, -BOX);
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-10 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum over all basic feasible points of a bounded LP; `None` when the
/// feasible set is empty.
pub fn brute_force(lp: &LpProblem) -> Option<f64> {
    let n = lp.n_vars;
    let dot = |r: &[f64], x: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    // every inequality as (row, rhs) meaning row . x >= rhs
    let mut ineq: Vec<(Vec<f64>, f64)> = lp
        .ineq_rows
        .iter()
        .cloned()
        .zip(lp.ineq_rhs.iter().copied())
        .collect();
    for j in 0..n {
        if lp.var_bounds[j] == VarBound::NonNegative {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            ineq.push((e, 0.0));
        }
    }
    let n_eq = lp.eq_rows.len();
    if n_eq > n {
        return None;
    }
    let mut best: Option<f64> = None;
    for subset in combinations(ineq.len(), n - n_eq) {
        let mut a: Vec<Vec<f64>> = lp.eq_rows.clone();
        let mut b: Vec<f64> = lp.eq_rhs.clone();
        for &i in &subset {
            a.push(ineq[i].0.clone());
            b.push(ineq[i].1);
        }
        let Some(x) = solve_dense(a, b) else { continue };
        let ok_eq = lp
            .eq_rows
            .iter()
            .zip(&lp.eq_rhs)
            .all(|(r, v)| (dot(r, &x) - v).abs() <= 1e-9);
        let ok_ineq = ineq.iter().all(|(r, h)| dot(r, &x) >= h - 1e-9);
        if ok_eq && ok_ineq {
            let v = dot(&lp.objective, &x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Composite Simpson rule with `panels` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Composite midpoint rule.
pub fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Bivariate normal CDF from `Phi(x)Phi(y) + int_0^rho phi2(x, y; r) dr`.
pub fn bvn_by_integral(x: f64, y: f64, rho: f64) -> f64 {
    let dens = |r: f64| {
        let q = 1.0 - r * r;
        (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * q)).exp() / (2.0 * std::f64::consts::PI * q.sqrt())
    };
    norm_cdf(x) * norm_cdf(y) + simpson(dens, 0.0, rho, 20_000)
}

/// `P[Y_d <= y | c_lo < eta <= c_hi]` by integrating the conditional normal
/// of the potential outcome given the selection shock.
pub fn complier_cdf_oracle(cfg: &DgpConfig, d: usize, c_lo: f64, c_hi: f64, y: f64) -> f64 {
    let rho = cfg.rho;
    let extra = if d == 1 {
        cfg.sigma_xi.powi(2)
    } else {
        cfg.sigma_xi.powi(2) + cfg.sigma_v.powi(2)
    };
    let sd = (1.0 - rho * rho + extra).sqrt();
    let u = if d == 1 { y / 2.0 } else { y - 1.0 };
    let num = simpson(|e| norm_cdf((u - rho * e) / sd) * norm_pdf(e), c_lo, c_hi, 4000);
    num / (norm_cdf(c_hi) - norm_cdf(c_lo))
}
