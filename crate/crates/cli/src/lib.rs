//! Experiment runner for `noisyrd`.
//!
//! Every subcommand reads one TOML experiment config (see [`config`]),
//! writes its result atomically to `--out` (or the config's `output`, or
//! stdout) and returns a one-line summary. Randomness derives from a single
//! root seed; per-`k` seeds are `derive_seed(root, k)`.

pub mod config;
pub mod output;

use std::sync::atomic::{AtomicBool, Ordering};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use noisyrd::asymptotics::{second_order_terms, SecondOrderParams, DEFAULT_C0};
use noisyrd::bounds::{default_gamma, lemma3_bound, lemma3_relaxed_bound, lemma4_bound, BoundEstimate};
use noisyrd::rd::{rd_curve, solve_for_distortion, solve_joint_or_degenerate};
use noisyrd::rng::derive_seed;
use noisyrd::simulator::{
    ensemble_excess, estimate_excess, estimate_excess_joint, Codebook, Encoder, SimResult,
    DEFAULT_SYMBOL_BUDGET,
};
use noisyrd::tilted::{dispersion, DispersionReport, TiltedContext};
use noisyrd::verify::{default_d_s, verify_suite};
use noisyrd::{Constraint, RDSolution, SourceModel};

use config::{BoundKind, LoadedConfig, SimMode, SizeRule, Unit};
use output::{config_hash, num, write_atomic, Csv};

#[derive(Debug, Parser)]
#[command(name = "noisyrd", version, about = "Rate-distortion experiments for noisy quadratic sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; overrides the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub unit: Option<Unit>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Rate-distortion curve over a list or grid of d_s.
    RdCurve,
    /// Rate and dispersions at one operating point.
    Dispersion,
    /// Second-order approximation of log M over a list of k.
    Approx,
    /// Random-coding bound on the excess probability.
    Bound,
    /// Empirical excess probability of random codes.
    Simulate,
    /// Identity suite against the configured model.
    Verify,
}

/// The identity suite found a residual above tolerance.
#[derive(Debug)]
pub struct InvariantFailure(pub String);

impl std::fmt::Display for InvariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant check failed: {}", self.0)
    }
}

impl std::error::Error for InvariantFailure {}

/// Process exit code for an error: 2 for non-convergence, 3 for a failed
/// identity suite, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<InvariantFailure>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<noisyrd::Error>() {
            return match e {
                noisyrd::Error::NotConverged { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

struct Run {
    cli_out: Option<PathBuf>,
    loaded: LoadedConfig,
    model: SourceModel,
    seed: u64,
    unit: Unit,
    c0: f64,
    hash: String,
    wrote_stdout: AtomicBool,
}

/// Summary line of a successful run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub summary: String,
    /// The result itself went to stdout.
    pub wrote_stdout: bool,
}

/// Runs one subcommand.
pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let path = cli.config.as_ref().context("--config <path> is required")?;
    let loaded = config::load(path)?;
    let text = std::str::from_utf8(&loaded.model_bytes).context("model file is not UTF-8")?;
    let model = SourceModel::from_toml_str(text)
        .with_context(|| format!("invalid model {}", loaded.model_path.display()))?;
    noisyrd::validate_model(&model)
        .with_context(|| format!("invalid model {}", loaded.model_path.display()))?;
    let c0 = loaded.config.c0.unwrap_or(DEFAULT_C0);
    if !(c0 > 0.0) {
        bail!("c0 must be positive, got {c0}");
    }
    let state = Run {
        cli_out: cli.out.clone(),
        seed: cli.seed.or(loaded.config.seed).unwrap_or(0),
        unit: cli.unit.or(loaded.config.unit).unwrap_or_default(),
        c0,
        hash: config_hash(&loaded.config_bytes, &loaded.model_bytes),
        model,
        loaded,
        wrote_stdout: AtomicBool::new(false),
    };
    let go = || match cli.command {
        Command::RdCurve => state.rd_curve(),
        Command::Dispersion => state.dispersion(),
        Command::Approx => state.approx(),
        Command::Bound => state.bound(),
        Command::Simulate => state.simulate(),
        Command::Verify => state.verify(),
    };
    let summary = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot build thread pool")?
            .install(go),
        None => go(),
    }?;
    Ok(Outcome {
        summary,
        wrote_stdout: state.wrote_stdout.load(Ordering::Relaxed),
    })
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> anyhow::Result<&'a T> {
    s.as_ref().with_context(|| format!("config has no [{name}] section"))
}

/// Solution at `(d_s, d_x)` and the `d_s` level its tilted informations use.
fn operating_point(
    model: &SourceModel,
    d_s: f64,
    d_x: Option<f64>,
) -> anyhow::Result<(RDSolution, f64, Option<Constraint>)> {
    match d_x {
        None => Ok((solve_for_distortion(model, d_s)?, d_s, None)),
        Some(dx) => {
            let (sol, slack) = solve_joint_or_degenerate(model, d_s, dx)?;
            let level = if slack == Some(Constraint::HiddenSource) { sol.d_s_achieved } else { d_s };
            Ok((sol, level, slack))
        }
    }
}

fn rate_dispersion(
    model: &SourceModel,
    d_s: f64,
    d_x: Option<f64>,
) -> anyhow::Result<(RDSolution, DispersionReport, Option<Constraint>)> {
    let (sol, level, slack) = operating_point(model, d_s, d_x)?;
    let rep = {
        let ctx = TiltedContext::new(model, &sol, level, d_x)?;
        dispersion(&ctx)
    };
    Ok((sol, rep, slack))
}

/// `(M, ln M)` for a size rule.
fn codebook_size(rule: SizeRule, rate: f64, v_tilde: f64, k: u64) -> anyhow::Result<(f64, f64)> {
    let m = match rule {
        SizeRule::SecondOrder { epsilon, logk_coeff } => {
            let t = second_order_terms(&SecondOrderParams {
                rate,
                v_tilde,
                epsilon,
                log_k_coeff: logk_coeff,
                k,
            })?;
            t.log_m().exp().ceil().max(1.0)
        }
        SizeRule::Fixed { m } => {
            if m == 0 {
                bail!("codebook_size.m must be >= 1");
            }
            m as f64
        }
        SizeRule::LogNats { value } => value.exp().ceil().max(1.0),
    };
    if !m.is_finite() {
        bail!("codebook size overflows");
    }
    Ok((m, m.ln()))
}

fn slack_name(s: Option<Constraint>) -> String {
    s.map_or_else(|| "none".into(), |c| c.to_string())
}

impl Run {
    fn emit(&self, contents: &str) -> anyhow::Result<String> {
        let target = self.cli_out.clone().or_else(|| {
            self.loaded.config.output.as_ref().map(|o| {
                if o.is_absolute() {
                    o.clone()
                } else {
                    self.loaded.config_dir.join(o)
                }
            })
        });
        match target {
            Some(p) => {
                write_atomic(&p, contents)?;
                Ok(p.display().to_string())
            }
            None => {
                print!("{contents}");
                self.wrote_stdout.store(true, Ordering::Relaxed);
                Ok("stdout".into())
            }
        }
    }

    fn provenance(&self) -> serde_json::Value {
        json!({ "config_sha256": self.hash, "seed": self.seed })
    }

    fn json(&self, mut v: serde_json::Value) -> String {
        v["provenance"] = self.provenance();
        let mut s = serde_json::to_string_pretty(&v).expect("json value");
        s.push('\n');
        s
    }

    fn rd_curve(&self) -> anyhow::Result<String> {
        let cfg = section(&self.loaded.config.rd_curve, "rd_curve")?;
        let d: Vec<f64> = match (&cfg.d_s, &cfg.grid) {
            (Some(list), None) => list.clone(),
            (None, Some(g)) => g.values(),
            _ => bail!("rd_curve needs exactly one of d_s or grid"),
        };
        if d.is_empty() {
            bail!("rd_curve has no d_s values");
        }
        let curve = rd_curve(&self.model, &d)?;
        let scale = self.unit.scale();
        let mut csv = Csv::new(&self.hash, self.seed, &format!("d_s,rate_{},lambda_s", self.unit.name()));
        for p in &curve.points {
            csv.row(&[num(p.d_s), num(p.rate * scale), num(p.lambda_s)]);
        }
        let dest = self.emit(&csv.into_string())?;
        Ok(format!("rd-curve: {} points -> {dest}", curve.points.len()))
    }

    fn dispersion(&self) -> anyhow::Result<String> {
        let cfg = section(&self.loaded.config.dispersion, "dispersion")?;
        let (sol, rep, slack) = rate_dispersion(&self.model, cfg.d_s, cfg.d_x)?;
        let s = self.unit.scale();
        let body = json!({
            "unit": self.unit.name(),
            "d_s": cfg.d_s,
            "d_x": cfg.d_x,
            "slack_constraint": slack_name(slack),
            "rate": sol.rate * s,
            "v_tilde": rep.v_tilde * s * s,
            "v_direct": rep.v_direct * s * s,
            "cond_var_term": rep.cond_var_term,
            "lambda_s": rep.lambda_s,
            "identity_residual": rep.identity_residual * s * s,
        });
        let dest = self.emit(&self.json(body))?;
        Ok(format!(
            "dispersion: R = {:.6} {u}, V_tilde = {:.6} {u}^2 -> {dest}",
            sol.rate * s,
            rep.v_tilde * s * s,
            u = self.unit.name()
        ))
    }

    fn approx(&self) -> anyhow::Result<String> {
        let cfg = section(&self.loaded.config.approx, "approx")?;
        if cfg.k.is_empty() {
            bail!("approx.k is empty");
        }
        let (sol, rep, _) = rate_dispersion(&self.model, cfg.d_s, cfg.d_x)?;
        let s = self.unit.scale();
        let mut csv = Csv::new(
            &self.hash,
            self.seed,
            "k,log_m_nats,log_m_bits,rate_term,dispersion_term,logk_term",
        );
        for &k in &cfg.k {
            let t = second_order_terms(&SecondOrderParams {
                rate: sol.rate,
                v_tilde: rep.v_tilde,
                epsilon: cfg.epsilon,
                log_k_coeff: cfg.logk_coeff,
                k,
            })?;
            let lm = t.log_m();
            csv.row(&[
                k.to_string(),
                num(lm),
                num(lm * std::f64::consts::LOG2_E),
                num(t.rate_term * s),
                num(t.dispersion_term * s),
                num(t.logk_term * s),
            ]);
        }
        let dest = self.emit(&csv.into_string())?;
        Ok(format!("approx: {} blocklengths -> {dest}", cfg.k.len()))
    }

    fn bound(&self) -> anyhow::Result<String> {
        let cfg = section(&self.loaded.config.bound, "bound")?;
        let method = cfg.bound_method()?;
        let joint = cfg.kind == BoundKind::Joint;
        let d_x = match (joint, cfg.d_x) {
            (true, Some(dx)) => Some(dx),
            (true, None) => bail!("bound.kind = \"joint\" needs bound.d_x"),
            (false, _) => None,
        };
        let (sol, rep, _) = rate_dispersion(&self.model, cfg.d_s, d_x)?;
        let (m, log_m) = codebook_size(cfg.codebook_size, sol.rate, rep.v_tilde, cfg.k as u64)?;
        let seed = derive_seed(self.seed, cfg.k as u64);
        let mut extra = json!({});
        let est: BoundEstimate = match cfg.kind {
            BoundKind::Single => lemma3_bound(&self.model, &sol, cfg.d_s, cfg.k, m, method, seed)?,
            BoundKind::Joint => lemma4_bound(
                &self.model,
                &sol,
                cfg.d_s,
                d_x.expect("checked"),
                cfg.k,
                m,
                method,
                seed,
            )?,
            BoundKind::Relaxed => {
                let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(m, cfg.k));
                let r = lemma3_relaxed_bound(&self.model, &sol, cfg.d_s, cfg.k, gamma, m, self.c0, method, seed)?;
                extra = json!({
                    "gamma": gamma,
                    "first_term": r.first_term,
                    "middle_term": r.middle_term,
                    "backoff": r.backoff,
                    "value_g": r.value_g,
                    "middle_term_g": r.middle_term_g,
                    "unrelaxed_value": r.direct,
                    "unrelaxed_half_width": r.direct_half_width,
                });
                BoundEstimate {
                    value: r.value,
                    half_width: r.half_width,
                    method: method.method(),
                    seed,
                    samples: match method {
                        noisyrd::bounds::BoundMethod::Exact => 0,
                        noisyrd::bounds::BoundMethod::MonteCarlo { outer, .. } => outer as u64,
                    },
                }
            }
        };
        let mut body = json!({
            "method": est.method,
            "value": est.value,
            "half_width": est.half_width,
            "samples": est.samples,
            "seed": self.seed,
            "k": cfg.k,
            "M_log_nats": log_m,
            "kind": format!("{:?}", cfg.kind).to_lowercase(),
        });
        if let (Some(b), Some(e)) = (body.as_object_mut(), extra.as_object()) {
            b.extend(e.clone());
        }
        let dest = self.emit(&self.json(body))?;
        Ok(format!("bound: {:.6} (+/- {:.2e}) -> {dest}", est.value, est.half_width))
    }

    fn simulate(&self) -> anyhow::Result<String> {
        let cfg = section(&self.loaded.config.simulate, "simulate")?;
        if cfg.k.is_empty() || cfg.trials == 0 {
            bail!("simulate needs a non-empty k list and trials >= 1");
        }
        let encoder: Encoder = cfg.encoder.into();
        let (sol, rep, slack) = rate_dispersion(&self.model, cfg.d_s, cfg.d_x)?;
        let mut csv = Csv::new(&self.hash, self.seed, "k,M_log_nats,d_s,d_x,excess_prob,half_width,trials,seed");
        let mut results: Vec<SimResult> = Vec::new();
        for &k in &cfg.k {
            if k == 0 {
                bail!("simulate.k entries must be >= 1");
            }
            let (m, log_m) = codebook_size(cfg.codebook_size, sol.rate, rep.v_tilde, k as u64)?;
            let kseed = derive_seed(self.seed, k as u64);
            let search = match cfg.mode {
                SimMode::Codebook => true,
                SimMode::Ensemble => false,
                SimMode::Auto => m * k as f64 <= cfg.search_budget as f64,
            };
            let mut r = if search {
                if m >= u64::MAX as f64 {
                    bail!("codebook size {m} too large to search");
                }
                let book = Codebook::auto(&sol, k, m as u64, derive_seed(kseed, 0), DEFAULT_SYMBOL_BUDGET)?;
                match cfg.d_x {
                    None => estimate_excess(&self.model, &book, cfg.d_s, cfg.trials, kseed, encoder)?,
                    Some(dx) => estimate_excess_joint(&self.model, &book, cfg.d_s, dx, cfg.trials, kseed, encoder)?,
                }
            } else {
                if encoder != Encoder::MinSurrogate {
                    bail!("ensemble simulation supports only encoder = \"min_surrogate\"");
                }
                ensemble_excess(&self.model, &sol, cfg.d_s, cfg.d_x, k, m, cfg.trials, kseed)?
            };
            r.m_log_nats = log_m;
            csv.row(&[
                k.to_string(),
                num(log_m),
                num(cfg.d_s),
                cfg.d_x.map(num).unwrap_or_default(),
                num(r.excess_prob),
                num(r.half_width),
                r.trials.to_string(),
                self.seed.to_string(),
            ]);
            results.push(r);
        }
        let dest = self.emit(&csv.into_string())?;
        let worst = results.iter().map(|r| r.excess_prob).fold(0.0, f64::max);
        Ok(format!(
            "simulate: {} blocklengths, max excess {:.4}, slack constraint {} -> {dest}",
            results.len(),
            worst,
            slack_name(slack)
        ))
    }

    fn verify(&self) -> anyhow::Result<String> {
        let cfg = self.loaded.config.verify.clone().unwrap_or_default();
        let d_s = cfg.d_s.unwrap_or_else(|| default_d_s(&self.model));
        let report = verify_suite(&self.model, d_s, cfg.d_x)?;
        let body = json!({
            "d_s": report.d_s,
            "d_x": report.d_x,
            "slack_constraint": slack_name(report.joint_slack),
            "all_pass": report.all_pass(),
            "checks": report.checks,
        });
        let dest = self.emit(&self.json(body))?;
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        if !failed.is_empty() {
            return Err(InvariantFailure(failed.join(", ")).into());
        }
        let worst = report.worst().map_or(0.0, |c| c.residual);
        Ok(format!(
            "verify: {} checks passed, worst residual {worst:.3e} -> {dest}",
            report.checks.len()
        ))
    }
}
