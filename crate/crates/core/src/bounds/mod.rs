//! Excess probabilities and one-shot achievability bounds.
//!
//! `pi(x^k, z^k)` is evaluated exactly by convolution. The random-coding
//! bounds average functionals of the law of `pi(X^k, Z^k)` with `Z^k` drawn
//! i.i.d. from the optimal output marginal; that law is either enumerated
//! exactly over types or sampled.

pub mod distribution;
pub mod enumerate;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

pub use distribution::{
    block_sum_law, exceeds, letter_law, pi_brute_force, pi_exact, pi_exact_capped,
    DistortionDistribution, PiEvaluator, DEFAULT_ATOM_CAP, EXCEED_TOL,
};
use enumerate::{compositions, composition_count, LogFactorial};

use crate::asymptotics::{delta_s_from, zeta_from};
use crate::error::{Error, Result};
use crate::model::{validate_model, SourceModel};
use crate::rd::RDSolution;
use crate::rng::{blocks, stream_rng, wald_half_width, Categorical};
use crate::tilted::{tilted_direct, TiltedContext};

/// Default cap on the number of codeword configurations enumerated per
/// source type.
pub const DEFAULT_CONFIG_BUDGET: u128 = 5_000_000;
const MC_BLOCK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Mc,
}

/// How a bound is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundMethod {
    /// Enumerate source types and codeword configurations.
    Exact,
    /// Sample `outer` source blocks, each with `inner` codewords.
    MonteCarlo { outer: usize, inner: usize },
}

impl BoundMethod {
    pub fn method(&self) -> Method {
        match self {
            BoundMethod::Exact => Method::Exact,
            BoundMethod::MonteCarlo { .. } => Method::Mc,
        }
    }
}

/// Estimate of a probability or bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEstimate {
    pub value: f64,
    /// 95% half-width; zero for exact values.
    pub half_width: f64,
    pub method: Method,
    pub seed: u64,
    pub samples: u64,
}

impl BoundEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            half_width: 0.0,
            method: Method::Exact,
            seed: 0,
            samples: 0,
        }
    }
}

/// Monte Carlo estimate of `pi(x^k, z^k)`.
pub fn pi_mc(
    model: &SourceModel,
    x: &[usize],
    z: &[usize],
    d_s: f64,
    samples: u64,
    seed: u64,
) -> Result<BoundEstimate> {
    distribution::check_pair(model, x, z)?;
    if samples == 0 {
        return Err(Error::Domain("samples must be >= 1".into()));
    }
    let noise = Categorical::new(model.noise().probs())?;
    let support = model.noise().support();
    let k = x.len();
    let offsets: Vec<f64> = x.iter().zip(z).map(|(&a, &b)| model.offset(a, b)).collect();
    let layout: Vec<_> = blocks(samples, MC_BLOCK).collect();
    let hits: u64 = layout
        .par_iter()
        .map(|&(stream, len)| {
            let mut rng = stream_rng(seed, stream);
            let mut hits = 0u64;
            for _ in 0..len {
                let sum: f64 = offsets
                    .iter()
                    .map(|a| (a + support[noise.sample(&mut rng)]).powi(2))
                    .sum();
                hits += u64::from(exceeds(sum, k, d_s));
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(BoundEstimate {
        value: p,
        half_width: wald_half_width(p, samples),
        method: Method::Mc,
        seed,
        samples,
    })
}

/// Random-coding ensemble: source model, blocklength, output law and the
/// excess predicate of a single or two-constraint code.
pub struct Ensemble<'a> {
    model: &'a SourceModel,
    k: usize,
    pi: PiEvaluator,
    /// Reproduction indices with positive mass, and their masses.
    support: Vec<usize>,
    q: Vec<f64>,
    z_of: Vec<usize>,
    /// Per `x`, `d_x(x, y(u))` for each support point.
    dx_of: Option<Vec<Vec<f64>>>,
    d_x: Option<f64>,
    lf: LogFactorial,
    budget: u128,
}

impl<'a> Ensemble<'a> {
    /// Single-constraint ensemble over the `S_hat` marginal of `solution`.
    pub fn new(model: &'a SourceModel, solution: &RDSolution, d_s: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("blocklength must be >= 1".into()));
        }
        let qz = solution.marginal_z();
        let support: Vec<usize> = (0..qz.len()).filter(|&z| qz[z] > 0.0).collect();
        Ok(Self {
            model,
            k,
            pi: PiEvaluator::new(model, k, d_s),
            q: support.iter().map(|&z| qz[z]).collect(),
            z_of: support.clone(),
            support,
            dx_of: None,
            d_x: None,
            lf: LogFactorial::new(k),
            budget: DEFAULT_CONFIG_BUDGET,
        })
    }

    /// Two-constraint ensemble over the pair marginal of a joint solution.
    pub fn joint(
        model: &'a SourceModel,
        solution: &RDSolution,
        d_s: f64,
        d_x: f64,
        k: usize,
    ) -> Result<Self> {
        if !solution.is_joint() {
            return Err(Error::Domain("two-constraint ensemble needs a joint solution".into()));
        }
        if k == 0 {
            return Err(Error::Domain("blocklength must be >= 1".into()));
        }
        let support: Vec<usize> = solution.support().collect();
        let mut dx_of = Vec::with_capacity(model.nx());
        for x in 0..model.nx() {
            let mut row = Vec::with_capacity(support.len());
            for &u in &support {
                row.push(model.d_x(x, solution.split(u).1)?);
            }
            dx_of.push(row);
        }
        Ok(Self {
            model,
            k,
            pi: PiEvaluator::new(model, k, d_s),
            q: support.iter().map(|&u| solution.marginal[u]).collect(),
            z_of: support.iter().map(|&u| solution.split(u).0).collect(),
            support,
            dx_of: Some(dx_of),
            d_x: Some(d_x),
            lf: LogFactorial::new(k),
            budget: DEFAULT_CONFIG_BUDGET,
        })
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn evaluator(&self) -> &PiEvaluator {
        &self.pi
    }

    /// Reproduction indices (into the solution's alphabet) with positive mass.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    fn observed_excess(&self, dx_sum: f64) -> bool {
        match self.d_x {
            Some(level) => exceeds(dx_sum, self.k, level),
            None => false,
        }
    }

    /// Excess probability of one codeword given by support positions.
    pub fn pi_codeword(&self, x: &[usize], code: &[usize]) -> Result<f64> {
        if let Some(dx) = &self.dx_of {
            let s: f64 = x.iter().zip(code).map(|(&xi, &c)| dx[xi][c]).sum();
            if self.observed_excess(s) {
                return Ok(1.0);
            }
        }
        let mut counts = vec![0u32; self.pi.n_classes()];
        for (&xi, &c) in x.iter().zip(code) {
            counts[self.pi.class(xi, self.z_of[c])] += 1;
        }
        self.pi.pi_counts(&counts)
    }

    /// Exact law of `pi(x^k, Z^k)` for a source block with symbol counts
    /// `x_counts`, as sorted `(value, probability)` atoms.
    pub fn inner_law_exact(&self, x_counts: &[u32]) -> Result<Vec<(f64, f64)>> {
        let s = self.support.len();
        let classes = self.pi.n_classes();
        struct Part {
            counts: Vec<u32>,
            dx: f64,
            logp: f64,
        }
        let mut groups: Vec<Vec<Part>> = Vec::new();
        let mut needed: u128 = 1;
        for (x, &n) in x_counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            needed = needed.saturating_mul(composition_count(n as usize, s));
            if needed > self.budget {
                return Err(Error::BudgetExceeded { needed, budget: self.budget });
            }
            let parts = compositions(n, s)
                .into_iter()
                .map(|c| {
                    let mut counts = vec![0u32; classes];
                    let mut dx = 0.0;
                    for (j, &cj) in c.iter().enumerate() {
                        counts[self.pi.class(x, self.z_of[j])] += cj;
                        if let Some(t) = &self.dx_of {
                            dx += cj as f64 * t[x][j];
                        }
                    }
                    Part {
                        logp: self.lf.log_multinomial(&c, &self.q),
                        counts,
                        dx,
                    }
                })
                .collect();
            groups.push(parts);
        }
        let mut idx = vec![0usize; groups.len()];
        let mut law = Vec::with_capacity(needed as usize);
        let mut counts = vec![0u32; classes];
        loop {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut dx = 0.0;
            let mut logp = 0.0;
            for (g, &i) in groups.iter().zip(&idx) {
                let part = &g[i];
                for (a, b) in counts.iter_mut().zip(&part.counts) {
                    *a += b;
                }
                dx += part.dx;
                logp += part.logp;
            }
            let pi = if self.observed_excess(dx) {
                1.0
            } else {
                self.pi.pi_counts(&counts)?
            };
            law.push((pi, logp.exp()));
            let mut g = 0;
            loop {
                if g == groups.len() {
                    return Ok(merge_law(law));
                }
                idx[g] += 1;
                if idx[g] < groups[g].len() {
                    break;
                }
                idx[g] = 0;
                g += 1;
            }
        }
    }

    /// Empirical law of `pi(x^k, Z^k)` over `n` sampled codewords.
    pub fn inner_law_sampled<R: rand::Rng>(
        &self,
        x: &[usize],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<(f64, f64)>> {
        let cat = Categorical::new(&self.q)?;
        let mut code = vec![0usize; self.k];
        let mut law = Vec::with_capacity(n);
        let w = 1.0 / n as f64;
        for _ in 0..n {
            cat.fill(rng, &mut code);
            law.push((self.pi_codeword(x, &code)?, w));
        }
        Ok(merge_law(law))
    }

    /// Source types with positive probability, with their log-probabilities.
    pub fn source_types(&self) -> Vec<(Vec<u32>, f64)> {
        let p_x = self.model.p_x();
        let live: Vec<usize> = (0..p_x.len()).filter(|&x| p_x[x] > 0.0).collect();
        let probs: Vec<f64> = live.iter().map(|&x| p_x[x]).collect();
        compositions(self.k as u32, live.len())
            .into_iter()
            .map(|c| {
                let logp = self.lf.log_multinomial(&c, &probs);
                let mut full = vec![0u32; p_x.len()];
                for (&x, &n) in live.iter().zip(&c) {
                    full[x] = n;
                }
                (full, logp)
            })
            .collect()
    }

    fn sample_source<R: rand::Rng>(&self, rng: &mut R) -> Result<Vec<usize>> {
        let cat = Categorical::new(self.model.p_x())?;
        let mut x = vec![0usize; self.k];
        cat.fill(rng, &mut x);
        Ok(x)
    }

    /// `E_X[f(law of pi(X, Z) | X)]` exactly over types, or by sampling.
    fn average<T, F>(&self, method: BoundMethod, seed: u64, f: F) -> Result<Averaged<T>>
    where
        T: Send,
        F: Fn(&[(f64, f64)], &[u32]) -> Result<T> + Sync,
    {
        match method {
            BoundMethod::Exact => {
                let types = self.source_types();
                let rows = types
                    .par_iter()
                    .map(|(c, logp)| {
                        let law = self.inner_law_exact(c)?;
                        Ok((logp.exp(), f(&law, c)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Averaged { rows, samples: 0 })
            }
            BoundMethod::MonteCarlo { outer, inner } => {
                if outer == 0 || inner == 0 {
                    return Err(Error::Domain("sample counts must be >= 1".into()));
                }
                let w = 1.0 / outer as f64;
                let rows = (0..outer as u64)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = stream_rng(seed, i);
                        let x = self.sample_source(&mut rng)?;
                        let law = self.inner_law_sampled(&x, inner, &mut rng)?;
                        let mut c = vec![0u32; self.model.nx()];
                        x.iter().for_each(|&s| c[s] += 1);
                        Ok((w, f(&law, &c)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Averaged { rows, samples: outer as u64 })
            }
        }
    }
}

struct Averaged<T> {
    rows: Vec<(f64, T)>,
    samples: u64,
}

impl<T> Averaged<T> {
    /// Weighted mean of `g(row)` and its 95% half-width (sampled rows only).
    fn mean(&self, g: impl Fn(&T) -> f64) -> (f64, f64) {
        let mean: f64 = self.rows.iter().map(|(w, t)| w * g(t)).sum();
        if self.samples < 2 {
            return (mean, 0.0);
        }
        let n = self.samples as f64;
        let var: f64 = self.rows.iter().map(|(_, t)| (g(t) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, 1.96 * (var / n).sqrt())
    }
}

/// Sorts atoms by value and merges exactly equal values.
fn merge_law(mut law: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    law.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(law.len());
    for (v, p) in law {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// `int_0^1 P[pi > t]^M dt` for a finite law of `pi`, which equals
/// `E[min of M i.i.d. copies of pi]`.
pub fn min_integral(law: &[(f64, f64)], m: f64) -> f64 {
    let mut below: f64 = 0.0;
    let mut prev = 0.0;
    let mut total = 0.0;
    for &(v, p) in law {
        // On [prev, v) the tail is P[pi >= v] = 1 - below.
        let tail_pow = if below <= 0.0 {
            1.0
        } else if below >= 1.0 {
            0.0
        } else {
            (m * (-below).ln_1p()).exp()
        };
        total += (v.min(1.0) - prev) * tail_pow;
        prev = v.min(1.0);
        below += p;
    }
    total
}

/// Relaxed middle term for one source block:
/// `max(0, min(1, t*) - a)` with `t* = inf {t : gamma P[pi <= t] >= 1}`.
pub fn relaxed_middle(law: &[(f64, f64)], gamma: f64, a: f64) -> f64 {
    let mut cdf = 0.0;
    let mut t_star = f64::INFINITY;
    for &(v, p) in law {
        cdf += p;
        if gamma * cdf >= 1.0 {
            t_star = v;
            break;
        }
    }
    (t_star.min(1.0) - a).max(0.0)
}

fn check_m(m: f64) -> Result<()> {
    if m.is_finite() && m >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("codebook size {m} must be finite and >= 1")))
    }
}

/// Random-coding bound on the excess probability of a `(k, M)` code,
/// `int_0^1 E[P[pi(X^k, Z^k) > t | X^k]^M] dt`.
///
/// The Monte Carlo variant plugs the empirical inner law into the power,
/// which overestimates the bound on average.
pub fn lemma3_bound(
    model: &SourceModel,
    solution: &RDSolution,
    d_s: f64,
    k: usize,
    m: f64,
    method: BoundMethod,
    seed: u64,
) -> Result<BoundEstimate> {
    check_m(m)?;
    let ens = Ensemble::new(model, solution, d_s, k)?;
    ensemble_bound(&ens, m, method, seed)
}

/// Two-constraint version: the excess event is the union of the hidden-
/// source excess and the (deterministic) observed-source excess.
#[allow(clippy::too_many_arguments)]
pub fn lemma4_bound(
    model: &SourceModel,
    joint_solution: &RDSolution,
    d_s: f64,
    d_x: f64,
    k: usize,
    m: f64,
    method: BoundMethod,
    seed: u64,
) -> Result<BoundEstimate> {
    check_m(m)?;
    let ens = Ensemble::joint(model, joint_solution, d_s, d_x, k)?;
    ensemble_bound(&ens, m, method, seed)
}

pub fn ensemble_bound(ens: &Ensemble, m: f64, method: BoundMethod, seed: u64) -> Result<BoundEstimate> {
    let avg = ens.average(method, seed, |law, _| Ok(min_integral(law, m)))?;
    let (value, half_width) = avg.mean(|v| *v);
    Ok(BoundEstimate {
        value: value.clamp(0.0, 1.0),
        half_width,
        method: method.method(),
        seed,
        samples: avg.samples,
    })
}

/// Terms of the relaxed bound `e^{-M/gamma} + middle + 2 zeta / sqrt(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxedBound {
    pub value: f64,
    pub first_term: f64,
    pub middle_term: f64,
    pub backoff: f64,
    pub half_width: f64,
    /// Bound value with the middle term computed from `g` instead of `pi`.
    pub value_g: f64,
    pub middle_term_g: f64,
    /// Unrelaxed bound on the same inner laws.
    pub direct: f64,
    pub direct_half_width: f64,
}

/// `gamma` with `log M = log gamma + log ln sqrt(k)`.
pub fn default_gamma(m: f64, k: usize) -> f64 {
    m / (k as f64).sqrt().ln()
}

/// Relaxed bound together with the unrelaxed bound on matched inputs.
#[allow(clippy::too_many_arguments)]
pub fn lemma3_relaxed_bound(
    model: &SourceModel,
    solution: &RDSolution,
    d_s: f64,
    k: usize,
    gamma: f64,
    m: f64,
    c0: f64,
    method: BoundMethod,
    seed: u64,
) -> Result<RelaxedBound> {
    check_m(m)?;
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma {gamma} must be positive")));
    }
    let moments = validate_model(model)?;
    let zeta = zeta_from(&moments, c0);
    let a = 2.0 * zeta / (k as f64).sqrt();
    if a >= 1.0 {
        return Err(Error::Domain(format!(
            "2 zeta / sqrt(k) = {a} >= 1 at k = {k}; blocklength too small"
        )));
    }
    let ens = Ensemble::new(model, solution, d_s, k)?;
    let g = GProb::new(model, solution, d_s, k, c0)?;
    let g_cache: std::sync::Mutex<HashMap<Vec<u32>, f64>> = Default::default();
    let avg = ens.average(method, seed, |law, counts| {
        let mid_g = {
            let hit = g_cache.lock().expect("cache lock").get(counts).copied();
            match hit {
                Some(v) => v,
                None => {
                    let v = g.relaxed_middle(counts, gamma, a)?;
                    g_cache.lock().expect("cache lock").insert(counts.to_vec(), v);
                    v
                }
            }
        };
        Ok((min_integral(law, m), relaxed_middle(law, gamma, a), mid_g))
    })?;
    let (direct, direct_half_width) = avg.mean(|r| r.0);
    let (middle, half_width) = avg.mean(|r| r.1);
    let (middle_g, _) = avg.mean(|r| r.2);
    let first = (-m / gamma).exp();
    Ok(RelaxedBound {
        value: first + middle + a,
        first_term: first,
        middle_term: middle,
        backoff: a,
        half_width,
        value_g: first + middle_g + a,
        middle_term_g: middle_g,
        direct: direct.clamp(0.0, 1.0),
        direct_half_width,
    })
}

/// `g(x^k, t) = P[(1/k) sum (phi(x_i) - Z_i)^2 + sigma_w^2 <= d_s - delta_s(t, k)]`
/// with `Z^k` i.i.d. from the output marginal.
pub struct GProb<'a> {
    model: &'a SourceModel,
    qz: Vec<f64>,
    k: usize,
    d_s: f64,
    zeta: f64,
    moments: crate::model::ModelMoments,
    /// Per `x`, law of `(phi(x) - Z)^2`.
    letter: Vec<DistortionDistribution>,
}

impl<'a> GProb<'a> {
    pub fn new(
        model: &'a SourceModel,
        solution: &RDSolution,
        d_s: f64,
        k: usize,
        c0: f64,
    ) -> Result<Self> {
        let moments = validate_model(model)?;
        let qz = solution.marginal_z();
        let letter = (0..model.nx())
            .map(|x| {
                let raw = (0..model.nz())
                    .map(|z| (model.offset(x, z).powi(2), qz[z]))
                    .collect();
                DistortionDistribution::from_raw(raw, usize::MAX)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            qz,
            k,
            d_s,
            zeta: zeta_from(&moments, c0),
            moments,
            letter,
        })
    }

    /// Law of `sum (phi(x_i) - Z_i)^2` for symbol counts.
    fn sum_law(&self, counts: &[u32]) -> Result<DistortionDistribution> {
        let mut law = DistortionDistribution::point(0.0);
        for (x, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                law = law.convolve(&self.letter[x], DEFAULT_ATOM_CAP)?;
            }
        }
        Ok(law)
    }

    pub fn threshold(&self, t: f64) -> Result<f64> {
        let delta = delta_s_from(&self.moments, self.zeta, self.d_s, t, self.k as u64)?;
        Ok(self.d_s - delta - self.moments.sigma_w2)
    }

    fn prob_from_law(&self, law: &DistortionDistribution, t: f64) -> Result<f64> {
        let thr = self.threshold(t)?;
        Ok(law.prob_at_most(self.k as f64 * (thr + EXCEED_TOL)))
    }

    pub fn exact_counts(&self, counts: &[u32], t: f64) -> Result<f64> {
        self.prob_from_law(&self.sum_law(counts)?, t)
    }

    pub fn exact(&self, x: &[usize], t: f64) -> Result<f64> {
        self.exact_counts(&symbol_counts(x, self.model.nx()), t)
    }

    pub fn sampled(&self, x: &[usize], t: f64, samples: u64, seed: u64) -> Result<BoundEstimate> {
        if samples == 0 {
            return Err(Error::Domain("samples must be >= 1".into()));
        }
        let thr = self.threshold(t)?;
        let cat = Categorical::new(&self.qz)?;
        let layout: Vec<_> = blocks(samples, MC_BLOCK).collect();
        let model = self.model;
        let k = self.k;
        let hits: u64 = layout
            .par_iter()
            .map(|&(stream, len)| {
                let mut rng = stream_rng(seed, stream);
                let mut hits = 0u64;
                for _ in 0..len {
                    let sum: f64 = x
                        .iter()
                        .map(|&xi| model.offset(xi, cat.sample(&mut rng)).powi(2))
                        .sum();
                    hits += u64::from(sum <= k as f64 * (thr + EXCEED_TOL));
                }
                hits
            })
            .sum();
        let p = hits as f64 / samples as f64;
        Ok(BoundEstimate {
            value: p,
            half_width: wald_half_width(p, samples),
            method: Method::Mc,
            seed,
            samples,
        })
    }

    /// `max(0, min(1, t_g) - a)` with `t_g = inf {t in [a, 1] : gamma g(t) >= 1}`.
    fn relaxed_middle(&self, counts: &[u32], gamma: f64, a: f64) -> Result<f64> {
        let law = self.sum_law(counts)?;
        let hit = |t: f64| -> Result<bool> { Ok(gamma * self.prob_from_law(&law, t)? >= 1.0) };
        if hit(a)? {
            return Ok(0.0);
        }
        if !hit(1.0)? {
            return Ok(1.0 - a);
        }
        let (mut lo, mut hi) = (a, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if hit(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi - a)
    }
}

fn symbol_counts(x: &[usize], n: usize) -> Vec<u32> {
    let mut c = vec![0u32; n];
    x.iter().for_each(|&s| c[s] += 1);
    c
}

/// `g(x^k, t)` exactly (method `Exact`) or by sampling `samples` codewords.
#[allow(clippy::too_many_arguments)]
pub fn g_prob(
    model: &SourceModel,
    solution: &RDSolution,
    x: &[usize],
    d_s: f64,
    t: f64,
    c0: f64,
    method: Method,
    samples: u64,
    seed: u64,
) -> Result<BoundEstimate> {
    if let Some(&i) = x.iter().find(|&&i| i >= model.nx()) {
        return Err(Error::SymbolOutOfRange { index: i, size: model.nx() });
    }
    let g = GProb::new(model, solution, d_s, x.len(), c0)?;
    match method {
        Method::Exact => Ok(BoundEstimate::exact(g.exact(x, t)?)),
        Method::Mc => g.sampled(x, t, samples, seed),
    }
}

/// Outcome of the empirical information-density check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Report {
    pub fraction: f64,
    /// `(t, fraction at t)` over the grid.
    pub per_t: Vec<(f64, f64)>,
    pub samples: u64,
    pub seed: u64,
    pub threshold: f64,
}

/// For sampled `X^k` and each `t` in a uniform grid on `[2 zeta/sqrt(k), 1]`,
/// checks `-ln g(X^k, t) - sum j_X(X_i) - k lambda_s delta_s(t, k) <= C ln k`.
#[allow(clippy::too_many_arguments)]
pub fn lemma2_empirical_check(
    model: &SourceModel,
    solution: &RDSolution,
    d_s: f64,
    k: usize,
    grid_points: usize,
    c: f64,
    c0: f64,
    samples: u64,
    seed: u64,
) -> Result<Lemma2Report> {
    if samples == 0 || grid_points == 0 {
        return Err(Error::Domain("samples and grid size must be >= 1".into()));
    }
    let moments = validate_model(model)?;
    let zeta = zeta_from(&moments, c0);
    let a = 2.0 * zeta / (k as f64).sqrt();
    if a >= 1.0 {
        return Err(Error::Domain(format!(
            "empty t range: 2 zeta / sqrt(k) = {a} >= 1 at k = {k}"
        )));
    }
    let grid: Vec<f64> = if grid_points == 1 {
        vec![1.0]
    } else {
        (0..grid_points)
            .map(|i| a + (1.0 - a) * i as f64 / (grid_points - 1) as f64)
            .collect()
    };
    let ctx = TiltedContext::new(model, solution, d_s, solution.d_x_achieved.filter(|_| solution.is_joint()))?;
    let j: Vec<f64> = (0..model.nx()).map(|x| tilted_direct(&ctx, x)).collect();
    let g = GProb::new(model, solution, d_s, k, c0)?;
    let threshold = c * (k as f64).ln();
    let deltas = grid
        .iter()
        .map(|&t| delta_s_from(&moments, zeta, d_s, t, k as u64))
        .collect::<Result<Vec<_>>>()?;
    let cat = Categorical::new(model.p_x())?;
    let passes: Vec<Vec<bool>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut x = vec![0usize; k];
            cat.fill(&mut rng, &mut x);
            let counts = symbol_counts(&x, model.nx());
            let law = g.sum_law(&counts)?;
            let info: f64 = x.iter().map(|&s| j[s]).sum();
            grid.iter()
                .zip(&deltas)
                .map(|(&t, &delta)| {
                    let gv = g.prob_from_law(&law, t)?;
                    let lhs = -gv.ln() - info - k as f64 * solution.lambda_s * delta;
                    Ok(lhs <= threshold)
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let per_t: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let hits = passes.iter().filter(|row| row[ti]).count();
            (t, hits as f64 / samples as f64)
        })
        .collect();
    let total: usize = passes.iter().map(|r| r.iter().filter(|&&b| b).count()).sum();
    Ok(Lemma2Report {
        fraction: total as f64 / (samples as usize * grid.len()) as f64,
        per_t,
        samples,
        seed,
        threshold,
    })
}

/// Direct Monte Carlo of `E[pi(X^k, Z^k)]`: draws `X^k`, one codeword
/// `Z^k` from the output marginal and the noise, and records the excess.
pub fn expected_pi_mc(
    model: &SourceModel,
    solution: &RDSolution,
    d_s: f64,
    k: usize,
    samples: u64,
    seed: u64,
) -> Result<BoundEstimate> {
    if samples == 0 || k == 0 {
        return Err(Error::Domain("samples and k must be >= 1".into()));
    }
    let cx = Categorical::new(model.p_x())?;
    let cz = Categorical::new(&solution.marginal_z())?;
    let cw = Categorical::new(model.noise().probs())?;
    let support = model.noise().support();
    let layout: Vec<_> = blocks(samples, MC_BLOCK).collect();
    let hits: u64 = layout
        .par_iter()
        .map(|&(stream, len)| {
            let mut rng = stream_rng(seed, stream);
            let mut hits = 0u64;
            for _ in 0..len {
                let mut sum = 0.0;
                for _ in 0..k {
                    let x = cx.sample(&mut rng);
                    let z = cz.sample(&mut rng);
                    let w = support[cw.sample(&mut rng)];
                    sum += (model.offset(x, z) + w).powi(2);
                }
                hits += u64::from(exceeds(sum, k, d_s));
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(BoundEstimate {
        value: p,
        half_width: wald_half_width(p, samples),
        method: Method::Mc,
        seed,
        samples,
    })
}
