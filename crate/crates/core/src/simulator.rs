//! Random codes: sampling, encoding and empirical excess probability.
//!
//! Codeword `m` of a codebook with seed `s` is always drawn from generator
//! stream `m` of `s`, so a materialized codebook and its streaming twin hold
//! the same entries and a codebook of size `M` is a prefix of every larger
//! one with the same seed.
//!
//! For codebooks too large to search, [`ensemble_excess`] samples the
//! outcome of the min-cost encoder over the random-code ensemble directly:
//! the minimum of `M` i.i.d. codeword costs is drawn by inversion and the
//! chosen codeword's composition conditionally on that cost.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::enumerate::{composition_count, compositions, LogFactorial};
use crate::bounds::{exceeds, PiEvaluator, DEFAULT_CONFIG_BUDGET};
use crate::error::{Error, Result};
use crate::model::SourceModel;
use crate::rd::RDSolution;
use crate::rng::{derive_seed, stream_rng, wilson_half_width, Categorical};

/// Default cap on `M * k` for materialized codebooks.
pub const DEFAULT_SYMBOL_BUDGET: u128 = 100_000_000;
/// Relative tolerance under which two codeword costs count as tied.
pub const TIE_TOL: f64 = 1e-9;

const TRIAL_TAG: u64 = 1;

/// Encoding rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    /// Minimize the (weighted) surrogate distortion.
    #[default]
    MinSurrogate,
    /// Minimize the exact excess probability.
    MinPi,
}

#[derive(Debug, Clone)]
enum Store {
    Materialized(Vec<u32>),
    Streaming(Categorical),
}

/// `M` reproduction sequences of length `k`. Symbols index the reproduction
/// alphabet of the generating solution: `S_hat` indices for single codes,
/// pair indices `z * ny + y` for joint codes.
#[derive(Debug, Clone)]
pub struct Codebook {
    k: usize,
    m: u64,
    seed: u64,
    alphabet: usize,
    ny: Option<usize>,
    lambda_s: f64,
    lambda_x: f64,
    store: Store,
}

fn code_sampler(solution: &RDSolution) -> Result<Categorical> {
    Categorical::new(&solution.marginal)
}

fn check_size(k: usize, m: u64) -> Result<()> {
    if k == 0 || m == 0 {
        return Err(Error::Domain(format!("codebook needs k >= 1 and M >= 1, got k = {k}, M = {m}")));
    }
    Ok(())
}

/// Materialized random codebook; fails if `M * k` exceeds the default budget.
pub fn sample_codebook(solution: &RDSolution, k: usize, m: u64, seed: u64) -> Result<Codebook> {
    sample_codebook_with_budget(solution, k, m, seed, DEFAULT_SYMBOL_BUDGET)
}

pub fn sample_codebook_with_budget(
    solution: &RDSolution,
    k: usize,
    m: u64,
    seed: u64,
    budget: u128,
) -> Result<Codebook> {
    check_size(k, m)?;
    let needed = m as u128 * k as u128;
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let cat = code_sampler(solution)?;
    let entries: Vec<u32> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = stream_rng(seed, i);
            let mut buf = vec![0usize; k];
            cat.fill(&mut rng, &mut buf);
            buf.into_iter().map(|s| s as u32)
        })
        .collect();
    Ok(Codebook::assemble(solution, k, m, seed, Store::Materialized(entries)))
}

impl Codebook {
    fn assemble(solution: &RDSolution, k: usize, m: u64, seed: u64, store: Store) -> Self {
        Self {
            k,
            m,
            seed,
            alphabet: solution.marginal.len(),
            ny: solution.ny,
            lambda_s: solution.lambda_s,
            lambda_x: solution.lambda_x.unwrap_or(0.0),
            store,
        }
    }

    /// Codebook whose entries are regenerated on demand.
    pub fn streaming(solution: &RDSolution, k: usize, m: u64, seed: u64) -> Result<Self> {
        check_size(k, m)?;
        Ok(Self::assemble(solution, k, m, seed, Store::Streaming(code_sampler(solution)?)))
    }

    /// Materialized if within `budget` symbols, else streaming.
    pub fn auto(solution: &RDSolution, k: usize, m: u64, seed: u64, budget: u128) -> Result<Self> {
        match sample_codebook_with_budget(solution, k, m, seed, budget) {
            Err(Error::BudgetExceeded { .. }) => Self::streaming(solution, k, m, seed),
            other => other,
        }
    }

    /// Codebook with given entries. `ny` is set for joint codes; the
    /// multipliers weight the joint encoder.
    pub fn from_entries(
        entries: &[Vec<usize>],
        alphabet: usize,
        ny: Option<usize>,
        lambda_s: f64,
        lambda_x: f64,
    ) -> Result<Self> {
        let k = entries.first().map_or(0, Vec::len);
        check_size(k, entries.len() as u64)?;
        let mut flat = Vec::with_capacity(entries.len() * k);
        for e in entries {
            if e.len() != k {
                return Err(Error::LengthMismatch { left: k, right: e.len() });
            }
            for &s in e {
                if s >= alphabet {
                    return Err(Error::SymbolOutOfRange { index: s, size: alphabet });
                }
                flat.push(s as u32);
            }
        }
        Ok(Self {
            k,
            m: entries.len() as u64,
            seed: 0,
            alphabet,
            ny,
            lambda_s,
            lambda_x,
            store: Store::Materialized(flat),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn is_joint(&self) -> bool {
        self.ny.is_some()
    }

    pub fn is_streaming(&self) -> bool {
        matches!(self.store, Store::Streaming(_))
    }

    /// `(z, y)` components of a symbol (`y = 0` for single codes).
    pub fn split(&self, s: usize) -> (usize, usize) {
        match self.ny {
            Some(ny) => (s / ny, s % ny),
            None => (s, 0),
        }
    }

    /// Writes entry `i` into `out` (length `k`).
    pub fn entry_into(&self, i: u64, out: &mut [usize]) {
        assert!(i < self.m, "entry {i} out of range");
        match &self.store {
            Store::Materialized(v) => {
                let start = i as usize * self.k;
                for (o, &s) in out.iter_mut().zip(&v[start..start + self.k]) {
                    *o = s as usize;
                }
            }
            Store::Streaming(cat) => cat.fill(&mut stream_rng(self.seed, i), out),
        }
    }

    pub fn entry(&self, i: u64) -> Vec<usize> {
        let mut out = vec![0; self.k];
        self.entry_into(i, &mut out);
        out
    }
}

/// Per-letter encoder cost `cost[x][s]`.
fn cost_table(model: &SourceModel, book: &Codebook) -> Result<Vec<Vec<f64>>> {
    let nz = model.nz();
    let expected = match book.ny {
        Some(ny) => nz * ny,
        None => nz,
    };
    if book.alphabet != expected {
        return Err(Error::LengthMismatch { left: expected, right: book.alphabet });
    }
    let mut table = vec![vec![0.0; book.alphabet]; model.nx()];
    for (x, row) in table.iter_mut().enumerate() {
        for (s, c) in row.iter_mut().enumerate() {
            let (z, y) = book.split(s);
            *c = if book.is_joint() {
                let dx = if book.lambda_x > 0.0 { model.d_x(x, y)? } else { 0.0 };
                book.lambda_s * model.surrogate(x, z) + book.lambda_x * dx
            } else {
                model.offset(x, z).powi(2)
            };
        }
    }
    Ok(table)
}

fn check_source(model: &SourceModel, book: &Codebook, x: &[usize]) -> Result<()> {
    if x.len() != book.k {
        return Err(Error::LengthMismatch { left: book.k, right: x.len() });
    }
    if let Some(&i) = x.iter().find(|&&i| i >= model.nx()) {
        return Err(Error::SymbolOutOfRange { index: i, size: model.nx() });
    }
    Ok(())
}

struct Searcher<'a> {
    book: &'a Codebook,
    cost: Vec<Vec<f64>>,
    pi: Option<PiEvaluator>,
    /// `(d_x level, d_x table)` for the joint excess under `MinPi`.
    dx: Option<(f64, Vec<Vec<f64>>)>,
}

impl<'a> Searcher<'a> {
    fn new(
        model: &SourceModel,
        book: &'a Codebook,
        rule: Encoder,
        d_s: f64,
        d_x: Option<f64>,
    ) -> Result<Self> {
        let pi = (rule == Encoder::MinPi).then(|| PiEvaluator::new(model, book.k, d_s));
        let dx = match (rule, d_x, book.is_joint()) {
            (Encoder::MinPi, Some(level), true) => {
                let mut t = vec![vec![0.0; book.alphabet]; model.nx()];
                for (x, row) in t.iter_mut().enumerate() {
                    for (s, v) in row.iter_mut().enumerate() {
                        *v = model.d_x(x, book.split(s).1)?;
                    }
                }
                Some((level, t))
            }
            _ => None,
        };
        Ok(Self {
            book,
            cost: cost_table(model, book)?,
            pi,
            dx,
        })
    }

    fn score(&self, x: &[usize], code: &[usize], bound: f64) -> Result<f64> {
        match &self.pi {
            None => {
                let mut c = 0.0;
                for (&xi, &s) in x.iter().zip(code) {
                    c += self.cost[xi][s];
                    if c > bound {
                        break;
                    }
                }
                Ok(c)
            }
            Some(pi) => {
                if let Some((level, t)) = &self.dx {
                    let sum: f64 = x.iter().zip(code).map(|(&xi, &s)| t[xi][s]).sum();
                    if exceeds(sum, x.len(), *level) {
                        return Ok(1.0);
                    }
                }
                let z: Vec<usize> = code.iter().map(|&s| self.book.split(s).0).collect();
                pi.pi(x, &z)
            }
        }
    }

    fn encode(&self, x: &[usize], buf: &mut [usize]) -> Result<u64> {
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        for i in 0..self.book.m {
            self.book.entry_into(i, buf);
            let margin = TIE_TOL * best.abs().max(1.0);
            let c = self.score(x, buf, best + margin)?;
            if best.is_infinite() || c < best - margin {
                best = c;
                best_i = i;
            }
        }
        Ok(best_i)
    }
}

/// Index of the codeword chosen for `x` (ties go to the lowest index).
pub fn encode(model: &SourceModel, codebook: &Codebook, x: &[usize], rule: Encoder) -> Result<u64> {
    encode_with_levels(model, codebook, x, rule, f64::INFINITY, None)
}

/// As [`encode`]; `d_s` and `d_x` set the excess event for `MinPi`.
pub fn encode_with_levels(
    model: &SourceModel,
    codebook: &Codebook,
    x: &[usize],
    rule: Encoder,
    d_s: f64,
    d_x: Option<f64>,
) -> Result<u64> {
    check_source(model, codebook, x)?;
    let s = Searcher::new(model, codebook, rule, d_s, d_x)?;
    s.encode(x, &mut vec![0; codebook.k])
}

/// Empirical excess probability of a code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimResult {
    pub k: usize,
    #[serde(rename = "M_log_nats")]
    pub m_log_nats: f64,
    pub d_s: f64,
    pub d_x: Option<f64>,
    pub excess_prob: f64,
    /// 95% Wilson half-width.
    pub half_width: f64,
    pub trials: u64,
    pub hits: u64,
    pub seed: u64,
}

impl SimResult {
    fn new(k: usize, m_log_nats: f64, d_s: f64, d_x: Option<f64>, hits: u64, trials: u64, seed: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Self {
            k,
            m_log_nats,
            d_s,
            d_x,
            excess_prob: p,
            half_width: wilson_half_width(p, trials),
            trials,
            hits,
            seed,
        }
    }
}

/// Draws `X^k` and `W^k`, then returns the hidden-source distortion sum of
/// `code` and the observed-source sum when `dx` is given.
struct Channel<'a> {
    model: &'a SourceModel,
    px: Categorical,
    noise: Categorical,
}

impl<'a> Channel<'a> {
    fn new(model: &'a SourceModel) -> Result<Self> {
        Ok(Self {
            model,
            px: Categorical::new(model.p_x())?,
            noise: Categorical::new(model.noise().probs())?,
        })
    }

    fn hidden_sum<R: rand::Rng>(&self, rng: &mut R, x: &[usize], z: impl Iterator<Item = usize>) -> f64 {
        let w = self.model.noise().support();
        x.iter()
            .zip(z)
            .map(|(&xi, zi)| (self.model.offset(xi, zi) + w[self.noise.sample(rng)]).powi(2))
            .sum()
    }
}

fn run_trials<F>(trials: u64, f: F) -> Result<u64>
where
    F: Fn(u64) -> Result<bool> + Sync,
{
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| f(t).map(u64::from))
        .collect::<Result<Vec<u64>>>()?;
    Ok(hits.into_iter().sum())
}

/// Empirical `P[d_s(S^k, Z^k(f(X^k))) > d_s]`.
pub fn estimate_excess(
    model: &SourceModel,
    codebook: &Codebook,
    d_s: f64,
    trials: u64,
    seed: u64,
    rule: Encoder,
) -> Result<SimResult> {
    simulate(model, codebook, d_s, None, trials, seed, rule)
}

/// Empirical probability of the union of the hidden- and observed-source
/// excess events for a joint code.
pub fn estimate_excess_joint(
    model: &SourceModel,
    codebook: &Codebook,
    d_s: f64,
    d_x: f64,
    trials: u64,
    seed: u64,
    rule: Encoder,
) -> Result<SimResult> {
    if !codebook.is_joint() {
        return Err(Error::Domain("joint excess needs a joint codebook".into()));
    }
    simulate(model, codebook, d_s, Some(d_x), trials, seed, rule)
}

fn simulate(
    model: &SourceModel,
    book: &Codebook,
    d_s: f64,
    d_x: Option<f64>,
    trials: u64,
    seed: u64,
    rule: Encoder,
) -> Result<SimResult> {
    let search = Searcher::new(model, book, rule, d_s, d_x)?;
    let chan = Channel::new(model)?;
    let root = derive_seed(seed, TRIAL_TAG);
    let k = book.k;
    let hits = run_trials(trials, |t| {
        let mut rng = stream_rng(root, t);
        let mut x = vec![0usize; k];
        chan.px.fill(&mut rng, &mut x);
        let mut code = vec![0usize; k];
        let i = search.encode(&x, &mut code)?;
        book.entry_into(i, &mut code);
        if let Some(level) = d_x {
            let mut sum = 0.0;
            for (&xi, &s) in x.iter().zip(&code) {
                sum += model.d_x(xi, book.split(s).1)?;
            }
            if exceeds(sum, k, level) {
                return Ok(true);
            }
        }
        let s = chan.hidden_sum(&mut rng, &x, code.iter().map(|&s| book.split(s).0));
        Ok(exceeds(s, k, d_s))
    })?;
    Ok(SimResult::new(k, (book.m as f64).ln(), d_s, d_x, hits, trials, seed))
}

/// Codeword composition for one source type: counts per (source symbol,
/// support point), with the observed-source distortion sum.
struct Config {
    cells: Vec<(usize, usize, u32)>,
    dx: f64,
}

struct CostAtom {
    configs: Vec<Config>,
    /// Cumulative conditional probabilities of `configs`.
    cum: Vec<f64>,
}

/// Law of the encoder cost of one random codeword for a fixed source type.
struct TypeTable {
    atoms: Vec<CostAtom>,
    /// `ln P[cost > atom i]`.
    ln_surv: Vec<f64>,
}

impl TypeTable {
    /// Index of the minimum-cost atom among `M` codewords, by inversion.
    fn sample_min(&self, m: f64, u: f64) -> usize {
        let target = (-u).ln_1p();
        self.ln_surv.partition_point(|&ls| m * ls > target).min(self.atoms.len() - 1)
    }

    /// `P[min of M costs = atom i]`.
    fn min_probs(&self, m: f64) -> Vec<f64> {
        let mut prev = 1.0;
        self.ln_surv
            .iter()
            .map(|&ls| {
                let cur = if ls == f64::NEG_INFINITY { 0.0 } else { (m * ls).exp() };
                let p = prev - cur;
                prev = cur;
                p.max(0.0)
            })
            .collect()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Outcome of the min-cost encoder over the random-code ensemble of size
/// `M` drawn from a solution's reproduction marginal.
pub struct CodeEnsemble<'a> {
    model: &'a SourceModel,
    k: usize,
    m: f64,
    d_s: f64,
    d_x: Option<f64>,
    support: Vec<usize>,
    q: Vec<f64>,
    z_of: Vec<usize>,
    /// `cost[x][j]` per support point `j`.
    cost: Vec<Vec<f64>>,
    dx: Option<Vec<Vec<f64>>>,
    lf: LogFactorial,
    budget: u128,
    tables: RwLock<HashMap<Vec<u32>, Arc<TypeTable>>>,
}

impl<'a> CodeEnsemble<'a> {
    /// Single-constraint ensemble (`d_x = None`) or joint ensemble.
    pub fn new(
        model: &'a SourceModel,
        solution: &RDSolution,
        d_s: f64,
        d_x: Option<f64>,
        k: usize,
        m: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("blocklength must be >= 1".into()));
        }
        if !(m.is_finite() && m >= 1.0) {
            return Err(Error::Domain(format!("codebook size {m} must be finite and >= 1")));
        }
        if d_x.is_some() != solution.is_joint() {
            return Err(Error::Domain("d_x level must be given exactly for joint solutions".into()));
        }
        let support: Vec<usize> = solution.support().collect();
        let z_of: Vec<usize> = support.iter().map(|&u| solution.split(u).0).collect();
        let lambda_x = solution.lambda_x.unwrap_or(0.0);
        let mut cost = vec![Vec::with_capacity(support.len()); model.nx()];
        let mut dx_tab = d_x.map(|_| vec![Vec::with_capacity(support.len()); model.nx()]);
        for x in 0..model.nx() {
            for &u in &support {
                let (z, y) = solution.split(u);
                match dx_tab.as_mut() {
                    Some(t) => {
                        let dx = model.d_x(x, y)?;
                        t[x].push(dx);
                        cost[x].push(solution.lambda_s * model.surrogate(x, z) + lambda_x * dx);
                    }
                    None => cost[x].push(model.offset(x, z).powi(2)),
                }
            }
        }
        Ok(Self {
            model,
            k,
            m,
            d_s,
            d_x,
            q: support.iter().map(|&u| solution.marginal[u]).collect(),
            support,
            z_of,
            cost,
            dx: dx_tab,
            lf: LogFactorial::new(k),
            budget: DEFAULT_CONFIG_BUDGET,
            tables: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.budget = budget;
        self
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    fn table(&self, counts: &[u32]) -> Result<Arc<TypeTable>> {
        if let Some(t) = self.tables.read().expect("table lock").get(counts) {
            return Ok(t.clone());
        }
        let t = Arc::new(self.build_table(counts)?);
        self.tables
            .write()
            .expect("table lock")
            .entry(counts.to_vec())
            .or_insert(t.clone());
        Ok(t)
    }

    fn build_table(&self, counts: &[u32]) -> Result<TypeTable> {
        let s = self.support.len();
        struct Part {
            comp: Vec<u32>,
            cost: f64,
            dx: f64,
            logp: f64,
        }
        let mut groups: Vec<(usize, Vec<Part>)> = Vec::new();
        let mut needed: u128 = 1;
        for (x, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            needed = needed.saturating_mul(composition_count(n as usize, s));
            if needed > self.budget {
                return Err(Error::BudgetExceeded { needed, budget: self.budget });
            }
            let parts = compositions(n, s)
                .into_iter()
                .map(|comp| {
                    let cost = comp.iter().zip(&self.cost[x]).map(|(&c, v)| c as f64 * v).sum();
                    let dx = match &self.dx {
                        Some(t) => comp.iter().zip(&t[x]).map(|(&c, v)| c as f64 * v).sum(),
                        None => 0.0,
                    };
                    Part {
                        logp: self.lf.log_multinomial(&comp, &self.q),
                        comp,
                        cost,
                        dx,
                    }
                })
                .collect();
            groups.push((x, parts));
        }
        let mut raw: Vec<(f64, f64, Config)> = Vec::with_capacity(needed as usize);
        let mut idx = vec![0usize; groups.len()];
        'outer: loop {
            let (mut cost, mut dx, mut logp) = (0.0, 0.0, 0.0);
            let mut cells = Vec::new();
            for ((x, parts), &i) in groups.iter().zip(&idx) {
                let p = &parts[i];
                cost += p.cost;
                dx += p.dx;
                logp += p.logp;
                for (j, &c) in p.comp.iter().enumerate() {
                    if c > 0 {
                        cells.push((*x, j, c));
                    }
                }
            }
            raw.push((cost, logp, Config { cells, dx }));
            let mut g = 0;
            loop {
                if g == groups.len() {
                    break 'outer;
                }
                idx[g] += 1;
                if idx[g] < groups[g].1.len() {
                    break;
                }
                idx[g] = 0;
                g += 1;
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Grouped by cost, masses kept as logs: with `M` near `e^{kR}` the
        // minimum sits in atoms far below double-precision resolution of 1.
        let mut grouped: Vec<(f64, Vec<(f64, Config)>)> = Vec::new();
        for (cost, logp, cfg) in raw {
            match grouped.last_mut() {
                Some((c0, members)) if cost - *c0 <= TIE_TOL * c0.abs().max(1.0) => {
                    members.push((logp, cfg))
                }
                _ => grouped.push((cost, vec![(logp, cfg)])),
            }
        }
        let mut atoms = Vec::with_capacity(grouped.len());
        let mut log_mass = Vec::with_capacity(grouped.len());
        for (_, members) in grouped {
            let top = members.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = members.iter().map(|m| (m.0 - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            let cum = weights
                .iter()
                .map(|w| {
                    acc += w / total;
                    acc
                })
                .collect();
            log_mass.push(top + total.ln());
            atoms.push(CostAtom {
                configs: members.into_iter().map(|m| m.1).collect(),
                cum,
            });
        }
        let n = atoms.len();
        let mut ln_tail = vec![f64::NEG_INFINITY; n];
        for i in (0..n.saturating_sub(1)).rev() {
            ln_tail[i] = log_add(ln_tail[i + 1], log_mass[i + 1]);
        }
        let mut ln_head = f64::NEG_INFINITY;
        let mut ln_surv = vec![f64::NEG_INFINITY; n];
        for i in 0..n.saturating_sub(1) {
            ln_head = log_add(ln_head, log_mass[i]);
            ln_surv[i] = if ln_head < -std::f64::consts::LN_2 {
                (-ln_head.exp()).ln_1p()
            } else {
                ln_tail[i]
            };
        }
        Ok(TypeTable { atoms, ln_surv })
    }

    fn observed_excess(&self, cfg: &Config) -> bool {
        self.d_x.is_some_and(|level| exceeds(cfg.dx, self.k, level))
    }

    /// Monte Carlo estimate of the excess probability of the encoder.
    pub fn simulate(&self, trials: u64, seed: u64) -> Result<SimResult> {
        let chan = Channel::new(self.model)?;
        let root = derive_seed(seed, TRIAL_TAG);
        let nx = self.model.nx();
        let hits = run_trials(trials, |t| {
            use rand::Rng;
            let mut rng = stream_rng(root, t);
            let mut counts = vec![0u32; nx];
            for _ in 0..self.k {
                counts[chan.px.sample(&mut rng)] += 1;
            }
            let table = self.table(&counts)?;
            let atom = &table.atoms[table.sample_min(self.m, rng.random::<f64>())];
            let pick: f64 = rng.random();
            let c = atom.cum.partition_point(|&v| v <= pick).min(atom.configs.len() - 1);
            let cfg = &atom.configs[c];
            if self.observed_excess(cfg) {
                return Ok(true);
            }
            let mut x = Vec::with_capacity(self.k);
            let mut z = Vec::with_capacity(self.k);
            for &(xi, j, n) in &cfg.cells {
                for _ in 0..n {
                    x.push(xi);
                    z.push(self.z_of[j]);
                }
            }
            let sum = chan.hidden_sum(&mut rng, &x, z.into_iter());
            Ok(exceeds(sum, self.k, self.d_s))
        })?;
        Ok(SimResult::new(self.k, self.m.ln(), self.d_s, self.d_x, hits, trials, seed))
    }

    /// Exact excess probability of the encoder, averaged over the ensemble.
    pub fn exact(&self) -> Result<f64> {
        let pi = PiEvaluator::new(self.model, self.k, self.d_s);
        let p_x = self.model.p_x();
        let live: Vec<usize> = (0..p_x.len()).filter(|&x| p_x[x] > 0.0).collect();
        let probs: Vec<f64> = live.iter().map(|&x| p_x[x]).collect();
        let types = compositions(self.k as u32, live.len());
        let terms = types
            .par_iter()
            .map(|c| {
                let mut counts = vec![0u32; p_x.len()];
                for (&x, &n) in live.iter().zip(c) {
                    counts[x] = n;
                }
                let table = self.build_table(&counts)?;
                let mut total = 0.0;
                for (atom, w) in table.atoms.iter().zip(table.min_probs(self.m)) {
                    if w == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    let mut prev = 0.0;
                    for (cfg, &cum) in atom.configs.iter().zip(&atom.cum) {
                        let p = cum - prev;
                        prev = cum;
                        let v = if self.observed_excess(cfg) {
                            1.0
                        } else {
                            let mut cc = vec![0u32; pi.n_classes()];
                            for &(xi, j, n) in &cfg.cells {
                                cc[pi.class(xi, self.z_of[j])] += n;
                            }
                            pi.pi_counts(&cc)?
                        };
                        inner += p * v;
                    }
                    total += w * inner;
                }
                Ok(self.lf.log_multinomial(c, &probs).exp() * total)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(terms.iter().sum::<f64>().clamp(0.0, 1.0))
    }
}

/// Ensemble simulation of the min-surrogate encoder with `M` codewords.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_excess(
    model: &SourceModel,
    solution: &RDSolution,
    d_s: f64,
    d_x: Option<f64>,
    k: usize,
    m: f64,
    trials: u64,
    seed: u64,
) -> Result<SimResult> {
    CodeEnsemble::new(model, solution, d_s, d_x, k, m)?.simulate(trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::rd::{lift_to_joint, solve_for_distortion};

    fn bes_solution() -> (SourceModel, RDSolution) {
        let m = presets::bes();
        let s = solve_for_distortion(&m, 0.375).unwrap();
        (m, s)
    }

    #[test]
    fn materialized_and_streaming_agree() {
        let (_, s) = bes_solution();
        let a = sample_codebook(&s, 7, 20, 5).unwrap();
        let b = Codebook::streaming(&s, 7, 20, 5).unwrap();
        for i in 0..20 {
            assert_eq!(a.entry(i), b.entry(i));
        }
        let small = sample_codebook(&s, 7, 5, 5).unwrap();
        assert_eq!(small.entry(4), a.entry(4));
        assert!(matches!(
            sample_codebook_with_budget(&s, 10, 10, 0, 99),
            Err(Error::BudgetExceeded { needed: 100, budget: 99 })
        ));
        assert!(Codebook::auto(&s, 10, 10, 0, 99).unwrap().is_streaming());
    }

    #[test]
    fn encoder_rules() {
        let m = presets::bes();
        let book = Codebook::from_entries(&[vec![1, 1, 0], vec![0, 1, 0], vec![0, 1, 0]], 2, None, 1.0, 0.0).unwrap();
        assert_eq!(encode(&m, &book, &[0, 1, 0], Encoder::MinSurrogate).unwrap(), 1);
        assert_eq!(encode(&m, &book, &[1, 1, 0], Encoder::MinSurrogate).unwrap(), 0);
        let idx = encode_with_levels(&m, &book, &[0, 1, 0], Encoder::MinPi, 0.2, None).unwrap();
        assert_eq!(idx, 1);
        let one = Codebook::from_entries(&[vec![1, 1, 1]], 2, None, 1.0, 0.0).unwrap();
        assert_eq!(encode(&m, &one, &[0, 0, 0], Encoder::MinSurrogate).unwrap(), 0);
    }

    #[test]
    fn single_word_matches_exact_mixture() {
        // k = 1, one codeword at the surrogate minimizer for both inputs is
        // not available in BES; use z = 0: pi(0, 0) = 0.5, pi(1, 0) = 1.
        let m = presets::bes();
        let book = Codebook::from_entries(&[vec![0]], 2, None, 1.0, 0.0).unwrap();
        let r = estimate_excess(&m, &book, 0.2, 200_000, 9, Encoder::MinSurrogate).unwrap();
        let exact = 0.5 * 0.5 + 0.5 * 1.0;
        assert!((r.excess_prob - exact).abs() <= r.half_width, "{r:?}");
    }

    #[test]
    fn ensemble_matches_codebook_search() {
        let (m, s) = bes_solution();
        let (k, mm) = (8, 16u64);
        let ens = CodeEnsemble::new(&m, &s, 0.375, None, k, mm as f64).unwrap();
        let exact = ens.exact().unwrap();
        let sim = ens.simulate(100_000, 3).unwrap();
        assert!((sim.excess_prob - exact).abs() <= 1.5 * sim.half_width, "{sim:?} vs {exact}");
        // Averaging explicit codebooks over seeds samples the same ensemble.
        let hits: u64 = (0..400u64)
            .into_par_iter()
            .map(|seed| {
                let book = sample_codebook(&s, k, mm, seed).unwrap();
                estimate_excess(&m, &book, 0.375, 250, seed, Encoder::MinSurrogate).unwrap().hits
            })
            .sum();
        let p = hits as f64 / 100_000.0;
        assert!((p - exact).abs() < 0.01, "{p} vs {exact}");
    }

    #[test]
    fn joint_with_loose_level_matches_single() {
        let (m, s) = bes_solution();
        let j = lift_to_joint(&m, &s).unwrap();
        let a = CodeEnsemble::new(&m, &s, 0.375, None, 10, 30.0).unwrap().exact().unwrap();
        let b = CodeEnsemble::new(&m, &j, 0.375, Some(1.0), 10, 30.0).unwrap().exact().unwrap();
        assert!((a - b).abs() < 1e-12);
        let sa = CodeEnsemble::new(&m, &s, 0.375, None, 10, 30.0).unwrap().simulate(5000, 1).unwrap();
        let sb = CodeEnsemble::new(&m, &j, 0.375, Some(1.0), 10, 30.0).unwrap().simulate(5000, 1).unwrap();
        assert_eq!(sa.hits, sb.hits);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (m, s) = bes_solution();
        let book = sample_codebook(&s, 6, 12, 2).unwrap();
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| estimate_excess(&m, &book, 0.375, 3000, 4, Encoder::MinSurrogate).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
