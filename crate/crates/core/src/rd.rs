//! Rate-distortion functions on finite alphabets by alternating minimization.
//!
//! Three problems share one fixed-point engine:
//! * the single-constraint function `R(d_s)` over the reproduction alphabet,
//! * the two-constraint function `R(d_s, d_x)` over pairs `(z, y)`,
//! * the fixed-output-law problem, whose optimal kernel is explicit.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Constraint, Error, Result};
use crate::model::{d_min_max, dx_min_max, SourceModel};

pub const MAX_ITERATIONS: usize = 100_000;
/// Relative tolerance on successive rate iterates.
pub const RATE_TOL: f64 = 1e-12;
/// Relative tolerance on successive marginal iterates.
pub const MARGINAL_TOL: f64 = 1e-13;
/// Marginal entries below this are set to zero.
pub const MARGINAL_FLOOR: f64 = 1e-300;
/// Bisection tolerance for a single distortion target.
pub const DISTORTION_TOL: f64 = 1e-9;
/// Bisection tolerance for the pair of targets in the joint problem.
pub const JOINT_DISTORTION_TOL: f64 = 1e-8;

const BISECTION_GOAL: f64 = 1e-12;
const MAX_BISECTION: usize = 200;
const LAMBDA_CEILING: f64 = 1e12;
/// First iteration at which a Newton polish of the marginal is attempted.
const POLISH_START: usize = 500;
const POLISH_EVERY: usize = 5_000;
/// Residual of the fixed-point equations accepted from the polish.
const KKT_TOL: f64 = 1e-12;
const NEWTON_STEPS: usize = 60;

/// Row-stochastic matrix `P(u | x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalKernel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ConditionalKernel {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Domain(format!("kernel row {r} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("kernel row {r} sums to {total}")));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.cols..(x + 1) * self.cols]
    }

    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.data[x * self.cols + u]
    }

    /// `sum_x p(x) K(u|x)`.
    pub fn output_law(&self, p_x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (x, &p) in p_x.iter().enumerate() {
            for (o, &k) in out.iter_mut().zip(self.row(x)) {
                *o += p * k;
            }
        }
        out
    }
}

/// Optimal (or best available) solution of a rate-distortion problem.
///
/// For joint solutions the reproduction index is `u = z * |X_hat| + y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RDSolution {
    pub kernel: ConditionalKernel,
    pub marginal: Vec<f64>,
    /// Nats.
    pub rate: f64,
    pub d_s_achieved: f64,
    pub d_x_achieved: Option<f64>,
    pub lambda_s: f64,
    pub lambda_x: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `|X_hat|` for joint solutions.
    pub ny: Option<usize>,
}

impl RDSolution {
    pub fn is_joint(&self) -> bool {
        self.ny.is_some()
    }

    /// Splits a reproduction index into `(z, y)`; `y = 0` for single solutions.
    pub fn split(&self, u: usize) -> (usize, usize) {
        match self.ny {
            Some(ny) => (u / ny, u % ny),
            None => (u, 0),
        }
    }

    /// Marginal of the `S_hat` component.
    pub fn marginal_z(&self) -> Vec<f64> {
        match self.ny {
            None => self.marginal.clone(),
            Some(ny) => self.marginal.chunks(ny).map(|c| c.iter().sum()).collect(),
        }
    }

    /// Reproduction indices with positive marginal mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.marginal
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(u, _)| u)
    }
}

/// Sorted samples of `R(d_s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RDCurve {
    pub points: Vec<RDPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RDPoint {
    pub d_s: f64,
    pub rate: f64,
    pub lambda_s: f64,
}

impl RDCurve {
    pub const CSV_HEADER: &'static str = "d_s,rate_nats,lambda_s";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.d_s, p.rate, p.lambda_s));
        }
        out
    }
}

struct FixedPoint {
    kernel: Vec<f64>,
    marginal: Vec<f64>,
    rate: f64,
    iterations: usize,
    converged: bool,
}

/// Alternating minimization of `I(X;U) + E[cost(X,U)]` for a row-major
/// `|X| x nu` cost table.
fn alternating_min(p_x: &[f64], cost: &[f64], nu: usize) -> FixedPoint {
    let nx = p_x.len();
    let (shifted, expo) = exponentials(cost, nu);

    let mut q = vec![1.0 / nu as f64; nu];
    let mut z = vec![0.0; nx];
    let mut c = vec![0.0; nu];
    let mut q_next = vec![0.0; nu];
    let mut rate_prev = f64::NAN;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for x in 0..nx {
            let row = &expo[x * nu..(x + 1) * nu];
            z[x] = row.iter().zip(&q).map(|(e, q)| e * q).sum::<f64>().max(f64::MIN_POSITIVE);
        }
        c.iter_mut().for_each(|v| *v = 0.0);
        let mut avg_cost = 0.0;
        for x in 0..nx {
            let w = p_x[x] / z[x];
            let row = &expo[x * nu..(x + 1) * nu];
            let srow = &shifted[x * nu..(x + 1) * nu];
            for u in 0..nu {
                let t = w * row[u];
                c[u] += t;
                avg_cost += t * q[u] * srow[u];
            }
        }
        let mut total = 0.0;
        for u in 0..nu {
            let v = q[u] * c[u];
            q_next[u] = if v < MARGINAL_FLOOR { 0.0 } else { v };
            total += q_next[u];
        }
        q_next.iter_mut().for_each(|v| *v /= total);

        let log_z: f64 = p_x.iter().zip(&z).map(|(p, z)| p * z.ln()).sum();
        let drift: f64 = q_next
            .iter()
            .zip(&c)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, c)| q * c.ln())
            .sum();
        let rate = -avg_cost - log_z - drift;

        let rate_ok = (rate - rate_prev).abs() <= RATE_TOL * rate.abs() + 1e-15;
        let marg_ok = q_next
            .iter()
            .zip(&q)
            .all(|(a, b)| (a - b).abs() <= MARGINAL_TOL * a + 1e-17);
        std::mem::swap(&mut q, &mut q_next);
        rate_prev = rate;

        if rate_ok && marg_ok {
            // Points that are still shrinking are off the optimal support.
            let mut pruned = false;
            for u in 0..nu {
                if q[u] > 0.0 && c[u] < 1.0 - 1e-10 {
                    q[u] = 0.0;
                    pruned = true;
                }
            }
            if !pruned {
                converged = true;
                break;
            }
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            rate_prev = f64::NAN;
        }
        if iterations >= POLISH_START && (iterations - POLISH_START) % POLISH_EVERY == 0 {
            if let Some(p) = polish(p_x, &expo, nu, &q) {
                q = p;
                converged = true;
                break;
            }
        }
    }
    tilted_fixed_point(p_x, &expo, nu, &q, iterations, converged)
}

/// Row-shifted costs and their exponentials.
fn exponentials(cost: &[f64], nu: usize) -> (Vec<f64>, Vec<f64>) {
    let mut shifted = cost.to_vec();
    for row in shifted.chunks_mut(nu) {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        row.iter_mut().for_each(|c| *c -= lo);
    }
    let expo = shifted.iter().map(|s| (-s).exp()).collect();
    (shifted, expo)
}

fn tilted_fixed_point(
    p_x: &[f64],
    expo: &[f64],
    nu: usize,
    q: &[f64],
    iterations: usize,
    converged: bool,
) -> FixedPoint {
    let nx = p_x.len();
    let mut kernel = vec![0.0; nx * nu];
    for x in 0..nx {
        let row = &expo[x * nu..(x + 1) * nu];
        let zx: f64 = row.iter().zip(q).map(|(e, q)| e * q).sum();
        for u in 0..nu {
            kernel[x * nu + u] = q[u] * row[u] / zx;
        }
    }
    let mut marginal = vec![0.0; nu];
    for x in 0..nx {
        for u in 0..nu {
            marginal[u] += p_x[x] * kernel[x * nu + u];
        }
    }
    let rate = mutual_information(p_x, &kernel, &marginal);
    FixedPoint {
        kernel,
        marginal,
        rate,
        iterations,
        converged,
    }
}

fn normalize(q: &mut [f64]) {
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
}

/// Active-set Newton iteration on `c_u(q) = 1` over the support of `q`,
/// where `c_u = sum_x p(x) e(x,u) / sum_v q_v e(x,v)`. Returns a marginal
/// meeting the optimality conditions to `KKT_TOL`.
fn polish(p_x: &[f64], expo: &[f64], nu: usize, start: &[f64]) -> Option<Vec<f64>> {
    let nx = p_x.len();
    let top = start.iter().copied().fold(0.0, f64::max);
    let mut q: Vec<f64> = start.iter().map(|&v| if v > 1e-9 * top { v } else { 0.0 }).collect();
    normalize(&mut q);
    let mut z = vec![0.0; nx];
    let mut c = vec![0.0; nu];
    for _ in 0..NEWTON_STEPS {
        for x in 0..nx {
            let row = &expo[x * nu..(x + 1) * nu];
            z[x] = row.iter().zip(&q).map(|(e, q)| e * q).sum();
            if !(z[x] > 0.0) {
                return None;
            }
        }
        for (u, cu) in c.iter_mut().enumerate() {
            *cu = (0..nx).map(|x| p_x[x] * expo[x * nu + u] / z[x]).sum();
        }
        let support: Vec<usize> = (0..nu).filter(|&u| q[u] > 0.0).collect();
        let inner = support.iter().map(|&u| (c[u] - 1.0).abs()).fold(0.0, f64::max);
        if inner <= KKT_TOL {
            let out = (0..nu)
                .filter(|&u| q[u] == 0.0)
                .max_by(|&a, &b| c[a].total_cmp(&c[b]));
            match out {
                Some(u) if c[u] > 1.0 + KKT_TOL => {
                    q[u] = 1e-6;
                    normalize(&mut q);
                    continue;
                }
                _ => return Some(q),
            }
        }
        let n = support.len();
        let mut h = vec![0.0; n * n];
        let mut step: Vec<f64> = support.iter().map(|&u| c[u] - 1.0).collect();
        for (i, &u) in support.iter().enumerate() {
            for (j, &v) in support.iter().enumerate() {
                h[i * n + j] = (0..nx)
                    .map(|x| p_x[x] * expo[x * nu + u] * expo[x * nu + v] / (z[x] * z[x]))
                    .sum();
            }
        }
        // With more support points than source letters `h` is singular; the
        // ridge turns the flat directions into long steps the ratio test clips.
        let scale = (0..n).map(|i| h[i * n + i]).fold(0.0, f64::max);
        for i in 0..n {
            h[i * n + i] += 1e-12 * scale;
        }
        solve_dense(&mut h, &mut step, n)?;
        // Ratio test: stop at the first coordinate that reaches zero.
        let blocking = support
            .iter()
            .zip(&step)
            .filter(|(_, d)| **d < 0.0)
            .map(|(&u, d)| (u, q[u] / -d))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .filter(|(_, t)| *t < 1.0);
        let t = blocking.map_or(1.0, |(_, t)| t);
        for (&u, d) in support.iter().zip(&step) {
            q[u] = (q[u] + t * d).max(0.0);
        }
        if let Some((u, _)) = blocking {
            q[u] = 0.0;
        }
        normalize(&mut q);
    }
    None
}

/// Gaussian elimination with partial pivoting; `b` is overwritten with the
/// solution. `None` for a numerically singular matrix.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 1e-15 * scale) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let tail: f64 = (col + 1..n).map(|k| a[col * n + k] * b[k]).sum();
        b[col] = (b[col] - tail) / a[col * n + col];
    }
    Some(())
}

/// `I(X;U)` for a row-major kernel and its output law.
fn mutual_information(p_x: &[f64], kernel: &[f64], marginal: &[f64]) -> f64 {
    let nu = marginal.len();
    let mut rate = 0.0;
    for (x, &p) in p_x.iter().enumerate() {
        for u in 0..nu {
            let k = kernel[x * nu + u];
            if k > 0.0 {
                rate += p * k * (k / marginal[u]).ln();
            }
        }
    }
    rate.max(0.0)
}

fn expected(p_x: &[f64], kernel: &[f64], table: &[f64]) -> f64 {
    let nu = table.len() / p_x.len();
    p_x.iter()
        .enumerate()
        .map(|(x, &p)| {
            let r = x * nu..(x + 1) * nu;
            p * kernel[r.clone()].iter().zip(&table[r]).map(|(k, d)| k * d).sum::<f64>()
        })
        .sum()
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn point_mass(nx: usize, nu: usize, at: usize) -> (Vec<f64>, Vec<f64>) {
    let mut kernel = vec![0.0; nx * nu];
    for x in 0..nx {
        kernel[x * nu + at] = 1.0;
    }
    let mut marginal = vec![0.0; nu];
    marginal[at] = 1.0;
    (kernel, marginal)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("multiplier {lambda} must be finite and >= 0")))
    }
}

/// Solves the Lagrangian problem `min I(X;Z) + lambda_s E[d_bar(X,Z)]`.
pub fn ba_fixed_multiplier(model: &SourceModel, lambda_s: f64) -> Result<RDSolution> {
    check_lambda(lambda_s)?;
    let table = model.surrogate_table();
    let (nx, nz) = (model.nx(), model.nz());
    let p_x = model.p_x();
    if lambda_s == 0.0 {
        let at = argmin((0..nz).map(|z| (0..nx).map(|x| p_x[x] * model.surrogate(x, z)).sum()));
        let (kernel, marginal) = point_mass(nx, nz, at);
        let d = expected(p_x, &kernel, table);
        return Ok(RDSolution {
            kernel: ConditionalKernel { rows: nx, cols: nz, data: kernel },
            marginal,
            rate: 0.0,
            d_s_achieved: d,
            d_x_achieved: None,
            lambda_s,
            lambda_x: None,
            iterations: 0,
            converged: true,
            ny: None,
        });
    }
    let cost: Vec<f64> = table.iter().map(|d| lambda_s * d).collect();
    let fp = alternating_min(p_x, &cost, nz);
    finish(single_solution(model, fp, lambda_s))
}

fn finish(sol: RDSolution) -> Result<RDSolution> {
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged {
            iterations: sol.iterations,
            best: Some(Box::new(sol)),
        })
    }
}

/// Accepts non-converged iterates inside a bisection; the final answer is
/// re-checked by the caller.
fn lenient(r: Result<RDSolution>) -> Result<RDSolution> {
    match r {
        Err(Error::NotConverged { best: Some(b), .. }) => Ok(*b),
        other => other,
    }
}

/// Outcome of a multiplier search.
enum Bracket<T> {
    Hit(f64, T),
    /// The distortion jumps across a multiplier: the curve has a linear
    /// stretch. Holds the evaluations just below and just above it.
    Jump { lo: (f64, T), hi: (f64, T) },
}

impl<T> Bracket<T> {
    fn hit(self, target: f64) -> Result<(f64, T)> {
        match self {
            Bracket::Hit(l, v) => Ok((l, v)),
            Bracket::Jump { .. } => Err(Error::Domain(format!(
                "distortion jumps across target {target}; no single multiplier attains it"
            ))),
        }
    }
}

/// Finds `lambda >= 0` with `eval(lambda).distortion == target`, where the
/// distortion is nonincreasing in `lambda` and `eval(0)` exceeds the target.
fn bisect_multiplier<T>(
    target: f64,
    tol: f64,
    mut eval: impl FnMut(f64) -> Result<T>,
    distortion: impl Fn(&T) -> f64,
) -> Result<Bracket<T>> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut below: Option<(f64, T)> = None;
    let mut above: (f64, T);
    loop {
        let v = eval(hi)?;
        let d = distortion(&v);
        if (d - target).abs() <= BISECTION_GOAL {
            return Ok(Bracket::Hit(hi, v));
        }
        if d < target {
            above = (hi, v);
            break;
        }
        lo = hi;
        below = Some((hi, v));
        hi *= 2.0;
        if hi > LAMBDA_CEILING {
            return Err(Error::Domain(format!(
                "target distortion {target} not reached for multipliers up to {LAMBDA_CEILING}"
            )));
        }
    }
    let mut collapsed = false;
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            collapsed = true;
            break;
        }
        let v = eval(mid)?;
        let d = distortion(&v);
        if (d - target).abs() <= BISECTION_GOAL {
            return Ok(Bracket::Hit(mid, v));
        }
        if d > target {
            lo = mid;
            below = Some((mid, v));
        } else {
            hi = mid;
            above = (mid, v);
        }
    }
    let gap_above = (distortion(&above.1) - target).abs();
    let gap_below = below.as_ref().map_or(f64::INFINITY, |b| (distortion(&b.1) - target).abs());
    if gap_above.min(gap_below) <= tol {
        return Ok(if gap_above <= gap_below {
            Bracket::Hit(above.0, above.1)
        } else {
            let (l, v) = below.expect("finite gap");
            Bracket::Hit(l, v)
        });
    }
    match below {
        Some(b) if collapsed => Ok(Bracket::Jump { lo: b, hi: above }),
        _ => Err(Error::Domain(format!(
            "bisection stalled {:e} away from target distortion {target}",
            gap_above.min(gap_below)
        ))),
    }
}

/// Fixed point of the family with cost `base + lambda * table` whose
/// expected `table` equals `target`. On a linear stretch of the curve the
/// two extreme optimal marginals at the critical multiplier share their
/// partition functions, so their mixture is optimal there as well.
fn solve_family(
    p_x: &[f64],
    base: Option<&[f64]>,
    table: &[f64],
    target: f64,
    tol: f64,
) -> Result<(f64, FixedPoint)> {
    let nu = table.len() / p_x.len();
    let cost = |l: f64| -> Vec<f64> {
        match base {
            Some(b) => b.iter().zip(table).map(|(b, d)| b + l * d).collect(),
            None => table.iter().map(|d| l * d).collect(),
        }
    };
    let found = bisect_multiplier(
        target,
        tol,
        |l| Ok(alternating_min(p_x, &cost(l), nu)),
        |fp| expected(p_x, &fp.kernel, table),
    )?;
    match found {
        Bracket::Hit(l, fp) => Ok((l, fp)),
        Bracket::Jump { lo: (_, a), hi: (l, b) } => {
            if !(a.converged && b.converged) {
                return Err(Error::NotConverged {
                    iterations: a.iterations.max(b.iterations),
                    best: None,
                });
            }
            let (da, db) = (expected(p_x, &a.kernel, table), expected(p_x, &b.kernel, table));
            let theta = (target - db) / (da - db);
            let q: Vec<f64> = a
                .marginal
                .iter()
                .zip(&b.marginal)
                .map(|(x, y)| theta * x + (1.0 - theta) * y)
                .collect();
            let (_, expo) = exponentials(&cost(l), nu);
            let fp = tilted_fixed_point(p_x, &expo, nu, &q, a.iterations + b.iterations, true);
            let gap = (expected(p_x, &fp.kernel, table) - target).abs();
            if gap > tol {
                return Err(Error::Domain(format!(
                    "mixture on a linear stretch missed target {target} by {gap:e}"
                )));
            }
            Ok((l, fp))
        }
    }
}

fn single_solution(model: &SourceModel, fp: FixedPoint, lambda_s: f64) -> RDSolution {
    let p_x = model.p_x();
    let d = expected(p_x, &fp.kernel, model.surrogate_table());
    RDSolution {
        kernel: ConditionalKernel { rows: model.nx(), cols: model.nz(), data: fp.kernel },
        marginal: fp.marginal,
        rate: fp.rate,
        d_s_achieved: d,
        d_x_achieved: None,
        lambda_s,
        lambda_x: None,
        iterations: fp.iterations,
        converged: fp.converged,
        ny: None,
    }
}

/// `R(d_s)` with its optimal kernel and multiplier.
pub fn solve_for_distortion(model: &SourceModel, d_s: f64) -> Result<RDSolution> {
    let (lo, hi) = d_min_max(model);
    if !(d_s > lo && d_s < hi) {
        return Err(Error::OutOfRange { value: d_s, lo, hi });
    }
    let (l, fp) = solve_family(model.p_x(), None, model.surrogate_table(), d_s, DISTORTION_TOL)?;
    finish(single_solution(model, fp, l))
}

fn joint_tables(model: &SourceModel) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let ny = model.ny().ok_or(Error::MissingDxTable)?;
    let (nx, nz) = (model.nx(), model.nz());
    let nu = nz * ny;
    let mut ds = vec![0.0; nx * nu];
    let mut dx = vec![0.0; nx * nu];
    for x in 0..nx {
        for z in 0..nz {
            for y in 0..ny {
                ds[x * nu + z * ny + y] = model.surrogate(x, z);
                dx[x * nu + z * ny + y] = model.d_x(x, y)?;
            }
        }
    }
    Ok((ny, ds, dx))
}

fn joint_solution(
    model: &SourceModel,
    kernel: Vec<f64>,
    marginal: Vec<f64>,
    lambdas: (f64, f64),
    iterations: usize,
    converged: bool,
) -> Result<RDSolution> {
    let (ny, ds, dx) = joint_tables(model)?;
    let p_x = model.p_x();
    let nu = marginal.len();
    Ok(RDSolution {
        rate: mutual_information(p_x, &kernel, &marginal),
        d_s_achieved: expected(p_x, &kernel, &ds),
        d_x_achieved: Some(expected(p_x, &kernel, &dx)),
        kernel: ConditionalKernel { rows: model.nx(), cols: nu, data: kernel },
        marginal,
        lambda_s: lambdas.0,
        lambda_x: Some(lambdas.1),
        iterations,
        converged,
        ny: Some(ny),
    })
}

/// Embeds a single-constraint solution into the pair alphabet with
/// `Y = g(Z)`, `g(z) = argmin_y E[d_x(X, y) | Z = z]`.
pub fn lift_to_joint(model: &SourceModel, single: &RDSolution) -> Result<RDSolution> {
    if single.is_joint() {
        return Err(Error::Domain("solution is already joint".into()));
    }
    let ny = model.ny().ok_or(Error::MissingDxTable)?;
    let (nx, nz) = (model.nx(), model.nz());
    let p_x = model.p_x();
    let mut g = vec![0; nz];
    for (z, gz) in g.iter_mut().enumerate() {
        let mut scores = Vec::with_capacity(ny);
        for y in 0..ny {
            let mut s = 0.0;
            for x in 0..nx {
                s += p_x[x] * single.kernel.get(x, z) * model.d_x(x, y)?;
            }
            scores.push(s);
        }
        *gz = argmin(scores.into_iter());
    }
    let nu = nz * ny;
    let mut kernel = vec![0.0; nx * nu];
    for x in 0..nx {
        for z in 0..nz {
            kernel[x * nu + z * ny + g[z]] = single.kernel.get(x, z);
        }
    }
    let mut marginal = vec![0.0; nu];
    for z in 0..nz {
        marginal[z * ny + g[z]] = single.marginal[z];
    }
    joint_solution(
        model,
        kernel,
        marginal,
        (single.lambda_s, 0.0),
        single.iterations,
        single.converged,
    )
}

/// Observed-source-only solution at multiplier `lambda_x`, embedded with
/// `Z = h(Y)`, `h(y) = argmin_z E[d_bar(X, z) | Y = y]`.
fn observed_only(model: &SourceModel, lambda_x: f64) -> Result<RDSolution> {
    let ny = model.ny().ok_or(Error::MissingDxTable)?;
    let table = model.d_x_table().ok_or(Error::MissingDxTable)?;
    let p_x = model.p_x();
    let fp = if lambda_x == 0.0 {
        let at = argmin((0..ny).map(|y| (0..model.nx()).map(|x| p_x[x] * table[x * ny + y]).sum()));
        let (kernel, marginal) = point_mass(model.nx(), ny, at);
        FixedPoint { kernel, marginal, rate: 0.0, iterations: 0, converged: true }
    } else {
        let cost: Vec<f64> = table.iter().map(|d| lambda_x * d).collect();
        alternating_min(p_x, &cost, ny)
    };
    embed_observed(model, fp, lambda_x)
}

fn embed_observed(model: &SourceModel, fp: FixedPoint, lambda_x: f64) -> Result<RDSolution> {
    let ny = model.ny().ok_or(Error::MissingDxTable)?;
    let (nx, nz) = (model.nx(), model.nz());
    let p_x = model.p_x();
    let (ky, qy) = (&fp.kernel, &fp.marginal);
    let mut h = vec![0; ny];
    for (y, hy) in h.iter_mut().enumerate() {
        *hy = argmin((0..nz).map(|z| {
            (0..nx)
                .map(|x| p_x[x] * ky[x * ny + y] * model.surrogate(x, z))
                .sum()
        }));
    }
    let nu = nz * ny;
    let mut kernel = vec![0.0; nx * nu];
    for x in 0..nx {
        for y in 0..ny {
            kernel[x * nu + h[y] * ny + y] = ky[x * ny + y];
        }
    }
    let mut marginal = vec![0.0; nu];
    for y in 0..ny {
        marginal[h[y] * ny + y] = qy[y];
    }
    joint_solution(model, kernel, marginal, (0.0, lambda_x), fp.iterations, fp.converged)
}

/// Solves `min I(X; Z, Y) + lambda_s E[d_bar(X,Z)] + lambda_x E[d_x(X,Y)]`.
///
/// When one multiplier is zero the corresponding coordinate is chosen as
/// the best deterministic function of the other.
pub fn ba_joint(model: &SourceModel, lambda_s: f64, lambda_x: f64) -> Result<RDSolution> {
    check_lambda(lambda_s)?;
    check_lambda(lambda_x)?;
    let (ny, ds, dx) = joint_tables(model)?;
    if lambda_x == 0.0 {
        let single = ba_fixed_multiplier(model, lambda_s);
        return match single {
            Ok(s) => lift_to_joint(model, &s),
            Err(Error::NotConverged { best: Some(b), iterations }) => Err(Error::NotConverged {
                iterations,
                best: Some(Box::new(lift_to_joint(model, &b)?)),
            }),
            Err(e) => Err(e),
        };
    }
    if lambda_s == 0.0 {
        return finish(observed_only(model, lambda_x)?);
    }
    let cost: Vec<f64> = ds
        .iter()
        .zip(&dx)
        .map(|(s, x)| lambda_s * s + lambda_x * x)
        .collect();
    let fp = alternating_min(model.p_x(), &cost, model.nz() * ny);
    finish(joint_solution(
        model,
        fp.kernel,
        fp.marginal,
        (lambda_s, lambda_x),
        fp.iterations,
        fp.converged,
    )?)
}

/// `R(d_s, d_x)` for a target strictly inside the region where both
/// constraints bind.
pub fn solve_joint_for_distortions(model: &SourceModel, d_s: f64, d_x: f64) -> Result<RDSolution> {
    let (s_lo, s_hi) = d_min_max(model);
    if !(d_s > s_lo && d_s < s_hi) {
        return Err(Error::OutOfRange { value: d_s, lo: s_lo, hi: s_hi });
    }
    let (x_lo, x_hi) = dx_min_max(model)?;
    if !(d_x > x_lo) {
        return Err(Error::OutOfRange { value: d_x, lo: x_lo, hi: x_hi });
    }
    if d_x >= x_hi {
        return Err(Error::Degenerate { slack: Constraint::ObservedSource });
    }
    let slack_tol = 1e-12;

    // d_x slack: the hidden-source optimum already meets d_x.
    let single = solve_for_distortion(model, d_s)?;
    let lifted = lift_to_joint(model, &single)?;
    if lifted.d_x_achieved.unwrap_or(f64::INFINITY) <= d_x + slack_tol {
        return Err(Error::Degenerate { slack: Constraint::ObservedSource });
    }
    // d_s slack: the observed-source optimum already meets d_s.
    let obs = solve_observed_only(model, d_x)?;
    if obs.d_s_achieved <= d_s + slack_tol {
        return Err(Error::Degenerate { slack: Constraint::HiddenSource });
    }

    let (_, ds, dx) = joint_tables(model)?;
    let inner = |lambda_s: f64| -> Result<RDSolution> {
        let at_zero = lenient(ba_joint(model, lambda_s, 0.0))?;
        if at_zero.d_x_achieved.unwrap_or(f64::INFINITY) <= d_x {
            return Ok(at_zero);
        }
        let base: Vec<f64> = ds.iter().map(|d| lambda_s * d).collect();
        let (l, fp) = solve_family(model.p_x(), Some(&base), &dx, d_x, JOINT_DISTORTION_TOL)?;
        joint_solution(model, fp.kernel, fp.marginal, (lambda_s, l), fp.iterations, fp.converged)
    };
    let (_, sol) =
        bisect_multiplier(d_s, JOINT_DISTORTION_TOL, inner, |s| s.d_s_achieved)?.hit(d_s)?;
    let sol = finish(sol)?;
    let lx = sol.lambda_x.unwrap_or(0.0);
    if lx <= 1e-10 || (sol.d_x_achieved.unwrap_or(f64::NAN) - d_x).abs() > JOINT_DISTORTION_TOL {
        return Err(Error::Degenerate { slack: Constraint::ObservedSource });
    }
    if sol.lambda_s <= 1e-10 {
        return Err(Error::Degenerate { slack: Constraint::HiddenSource });
    }
    Ok(sol)
}

/// Observed-source-only solution meeting `d_x`, embedded with `Z = h(Y)`.
pub fn solve_observed_only(model: &SourceModel, d_x: f64) -> Result<RDSolution> {
    let (lo, hi) = dx_min_max(model)?;
    if !(d_x > lo && d_x < hi) {
        return Err(Error::OutOfRange { value: d_x, lo, hi });
    }
    let table = model.d_x_table().ok_or(Error::MissingDxTable)?;
    let (l, fp) = solve_family(model.p_x(), None, table, d_x, DISTORTION_TOL)?;
    finish(embed_observed(model, fp, l)?)
}

/// Two-constraint solution at `(d_s, d_x)`. In a degenerate case returns
/// the solution of the problem with the slack constraint dropped (lifted to
/// pairs) and names that constraint.
pub fn solve_joint_or_degenerate(
    model: &SourceModel,
    d_s: f64,
    d_x: f64,
) -> Result<(RDSolution, Option<Constraint>)> {
    match solve_joint_for_distortions(model, d_s, d_x) {
        Ok(s) => Ok((s, None)),
        Err(Error::Degenerate { slack: Constraint::ObservedSource }) => {
            let single = solve_for_distortion(model, d_s)?;
            Ok((lift_to_joint(model, &single)?, Some(Constraint::ObservedSource)))
        }
        Err(Error::Degenerate { slack: Constraint::HiddenSource }) => {
            Ok((solve_observed_only(model, d_x)?, Some(Constraint::HiddenSource)))
        }
        Err(e) => Err(e),
    }
}

/// Solution of the fixed-output-law problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizedRD {
    pub rate: f64,
    pub lambda_star: f64,
    pub kernel: ConditionalKernel,
    pub d_achieved: f64,
}

/// Tilted kernel `P_Y(y) exp(-lambda d_bar(x,y)) / N(x)`.
pub fn tilted_kernel(model: &SourceModel, p_y: &[f64], lambda: f64) -> ConditionalKernel {
    let (nx, nz) = (model.nx(), model.nz());
    let mut data = vec![0.0; nx * nz];
    for x in 0..nx {
        let lo = (0..nz)
            .filter(|&z| p_y[z] > 0.0)
            .map(|z| model.surrogate(x, z))
            .fold(f64::INFINITY, f64::min);
        let row = &mut data[x * nz..(x + 1) * nz];
        for z in 0..nz {
            if p_y[z] > 0.0 {
                row[z] = p_y[z] * (-lambda * (model.surrogate(x, z) - lo)).exp();
            }
        }
        let n: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= n);
    }
    ConditionalKernel { rows: nx, cols: nz, data }
}

fn relative_entropy_rate(p_x: &[f64], kernel: &ConditionalKernel, p_y: &[f64]) -> f64 {
    let mut r = 0.0;
    for (x, &p) in p_x.iter().enumerate() {
        for (y, &k) in kernel.row(x).iter().enumerate() {
            if k > 0.0 {
                r += p * k * (k / p_y[y]).ln();
            }
        }
    }
    r.max(0.0)
}

/// `min D(P_{Z|X} || P_Y | P_X)` subject to `E[d_bar(X,Z)] <= d`.
pub fn generalized_rd(model: &SourceModel, p_y: &[f64], d: f64) -> Result<GeneralizedRD> {
    let nz = model.nz();
    if p_y.len() != nz {
        return Err(Error::LengthMismatch { left: p_y.len(), right: nz });
    }
    if p_y.iter().any(|p| !(*p >= 0.0)) || ((p_y.iter().sum::<f64>()) - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("output law must be a probability vector".into()));
    }
    let p_x = model.p_x();
    let d_min: f64 = (0..model.nx())
        .map(|x| {
            p_x[x]
                * (0..nz)
                    .filter(|&z| p_y[z] > 0.0)
                    .map(|z| model.surrogate(x, z))
                    .fold(f64::INFINITY, f64::min)
        })
        .sum();
    if d <= d_min {
        return Err(Error::Infeasible { d, d_min });
    }
    let eval = |lambda: f64| -> Result<GeneralizedRD> {
        let kernel = tilted_kernel(model, p_y, lambda);
        let d_achieved = expected(p_x, &kernel.data, model.surrogate_table());
        Ok(GeneralizedRD {
            rate: relative_entropy_rate(p_x, &kernel, p_y),
            lambda_star: lambda,
            kernel,
            d_achieved,
        })
    };
    let free = eval(0.0)?;
    if free.d_achieved <= d {
        return Ok(free);
    }
    bisect_multiplier(d, DISTORTION_TOL, eval, |g| g.d_achieved)?
        .hit(d)
        .map(|(_, g)| g)
}

/// `R(d_s)` at each requested distortion, solved in parallel.
pub fn rd_curve(model: &SourceModel, d_values: &[f64]) -> Result<RDCurve> {
    let mut points = d_values
        .par_iter()
        .map(|&d| {
            solve_for_distortion(model, d).map(|s| RDPoint {
                d_s: d,
                rate: s.rate,
                lambda_s: s.lambda_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.d_s.total_cmp(&b.d_s));
    Ok(RDCurve { points })
}
