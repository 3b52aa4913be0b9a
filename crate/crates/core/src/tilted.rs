//! Information densities, distortion-tilted informations and dispersions.
//!
//! Every expectation here is an exact finite sum over `X`, the optimal
//! reproduction and the noise support.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_model, ModelMoments, SourceModel};
use crate::rd::RDSolution;

/// Tolerance used when checking that a solution matches its targets.
const CONTEXT_TOL: f64 = 1e-8;

/// A solved problem together with the distortion levels it was solved for.
#[derive(Debug, Clone)]
pub struct TiltedContext<'a> {
    pub model: &'a SourceModel,
    pub solution: &'a RDSolution,
    pub d_s: f64,
    pub d_x: Option<f64>,
    moments: ModelMoments,
}

impl<'a> TiltedContext<'a> {
    pub fn new(
        model: &'a SourceModel,
        solution: &'a RDSolution,
        d_s: f64,
        d_x: Option<f64>,
    ) -> Result<Self> {
        let moments = validate_model(model)?;
        if (solution.d_s_achieved - d_s).abs() > CONTEXT_TOL {
            return Err(Error::Domain(format!(
                "solution reaches d_s = {}, context asks for {d_s}",
                solution.d_s_achieved
            )));
        }
        match (solution.is_joint(), d_x) {
            (true, Some(dx)) => {
                let got = solution.d_x_achieved.unwrap_or(f64::NAN);
                // A slack observed-source constraint only has to hold.
                let lambda_x = solution.lambda_x.unwrap_or(0.0);
                let ok = if lambda_x > 0.0 {
                    (got - dx).abs() <= CONTEXT_TOL
                } else {
                    got <= dx + CONTEXT_TOL
                };
                if !ok {
                    return Err(Error::Domain(format!(
                        "solution reaches d_x = {got}, context asks for {dx}"
                    )));
                }
            }
            (false, None) => {}
            (true, None) => return Err(Error::Domain("joint solution needs a d_x level".into())),
            (false, Some(_)) => {
                return Err(Error::Domain("d_x level given for a single-constraint solution".into()))
            }
        }
        Ok(Self {
            model,
            solution,
            d_s,
            d_x,
            moments,
        })
    }

    pub fn moments(&self) -> &ModelMoments {
        &self.moments
    }

    pub fn lambda_s(&self) -> f64 {
        self.solution.lambda_s
    }

    pub fn lambda_x(&self) -> f64 {
        self.solution.lambda_x.unwrap_or(0.0)
    }

    pub fn is_joint(&self) -> bool {
        self.solution.is_joint()
    }

    /// Per-letter `d_x(x, y)` at the joint reproduction index `u`.
    fn dx_at(&self, x: usize, u: usize) -> f64 {
        let (_, y) = self.solution.split(u);
        self.model.d_x(x, y).unwrap_or(0.0)
    }

    /// Deterministic part of the tilt: `lambda_s (d_bar - d_s) + lambda_x (d_x - d_x_level)`.
    fn tilt(&self, x: usize, u: usize) -> f64 {
        let (z, _) = self.solution.split(u);
        let mut t = self.lambda_s() * (self.model.surrogate(x, z) - self.d_s);
        if let Some(level) = self.d_x {
            t += self.lambda_x() * (self.dx_at(x, u) - level);
        }
        t
    }
}

/// `ln(K(u|x) / q(u))` in nats. For joint contexts `u` indexes `(z, y)`.
pub fn info_density(ctx: &TiltedContext, x: usize, u: usize) -> Result<f64> {
    let q = ctx.solution.marginal[u];
    if q <= 0.0 {
        return Err(Error::ZeroMarginal { index: u });
    }
    Ok((ctx.solution.kernel.get(x, u) / q).ln())
}

/// Indirect tilted information of a single-constraint context.
pub fn tilted_indirect(ctx: &TiltedContext, s: f64, x: usize, z: usize) -> Result<f64> {
    let zv = ctx.model.s_hat().value(z);
    Ok(info_density(ctx, x, z)? + ctx.lambda_s() * ((s - zv).powi(2) - ctx.d_s))
}

/// Direct tilted information `-ln sum_u q(u) exp(-tilt(x,u))`, computed with
/// a max shift. Reduces to the single-constraint form when `d_x` is absent.
pub fn tilted_direct(ctx: &TiltedContext, x: usize) -> f64 {
    let terms: Vec<f64> = ctx
        .solution
        .support()
        .map(|u| ctx.solution.marginal[u].ln() - ctx.tilt(x, u))
        .collect();
    -log_sum_exp(&terms)
}

/// Two-constraint indirect tilted information.
pub fn tilted_indirect_joint(
    ctx: &TiltedContext,
    s: f64,
    x: usize,
    z: usize,
    y: usize,
) -> Result<f64> {
    let ny = ctx
        .solution
        .ny
        .ok_or_else(|| Error::Domain("context is not joint".into()))?;
    let level = ctx.d_x.ok_or(Error::MissingDxTable)?;
    let u = z * ny + y;
    let zv = ctx.model.s_hat().value(z);
    Ok(info_density(ctx, x, u)?
        + ctx.lambda_s() * ((s - zv).powi(2) - ctx.d_s)
        + ctx.lambda_x() * (ctx.model.d_x(x, y)? - level))
}

/// Two-constraint direct tilted information.
pub fn tilted_direct_joint(ctx: &TiltedContext, x: usize) -> Result<f64> {
    if !ctx.is_joint() {
        return Err(Error::Domain("context is not joint".into()));
    }
    Ok(tilted_direct(ctx, x))
}

/// `-ln sum_y P_Y(y) exp(lambda d - lambda d_bar(x, y))`.
pub fn lambda_capital(
    model: &SourceModel,
    p_y: &[f64],
    d: f64,
    lambda: f64,
    x: usize,
) -> Result<f64> {
    if p_y.len() != model.nz() {
        return Err(Error::LengthMismatch {
            left: p_y.len(),
            right: model.nz(),
        });
    }
    let terms: Vec<f64> = p_y
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(z, &p)| p.ln() + lambda * d - lambda * model.surrogate(x, z))
        .collect();
    Ok(-log_sum_exp(&terms))
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + terms.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

/// Dispersions and the law-of-total-variance residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionReport {
    pub v_tilde: f64,
    pub v_direct: f64,
    pub cond_var_term: f64,
    pub lambda_s: f64,
    pub identity_residual: f64,
}

/// One atom `(probability, x, u, w)` of the law of `(X, reproduction, W)`.
pub(crate) fn joint_atoms<'b>(
    ctx: &'b TiltedContext,
) -> impl Iterator<Item = (f64, usize, usize, f64)> + 'b {
    let sol = ctx.solution;
    let p_x = ctx.model.p_x();
    (0..ctx.model.nx()).flat_map(move |x| {
        sol.support().flat_map(move |u| {
            let pk = p_x[x] * sol.kernel.get(x, u);
            ctx.model
                .noise()
                .atoms()
                .filter(move |_| pk > 0.0)
                .map(move |(w, pw)| (pk * pw, x, u, w))
        })
    })
}

/// Value of the indirect tilted information at one atom.
pub(crate) fn indirect_at(ctx: &TiltedContext, x: usize, u: usize, w: f64) -> f64 {
    let (z, y) = ctx.solution.split(u);
    let s = ctx.model.phi()[x] + w;
    let value = if ctx.is_joint() {
        tilted_indirect_joint(ctx, s, x, z, y)
    } else {
        tilted_indirect(ctx, s, x, z)
    };
    value.expect("atoms lie on the support")
}

fn variance(atoms: &[(f64, f64)]) -> (f64, f64) {
    let mean: f64 = atoms.iter().map(|(p, v)| p * v).sum();
    let var: f64 = atoms.iter().map(|(p, v)| p * (v - mean).powi(2)).sum();
    (mean, var)
}

/// Exact dispersions of a single or joint context.
pub fn dispersion(ctx: &TiltedContext) -> DispersionReport {
    let indirect: Vec<(f64, f64)> = joint_atoms(ctx)
        .map(|(p, x, u, w)| (p, indirect_at(ctx, x, u, w)))
        .collect();
    let (_, v_tilde) = variance(&indirect);
    let direct: Vec<(f64, f64)> = (0..ctx.model.nx())
        .map(|x| (ctx.model.p_x()[x], tilted_direct(ctx, x)))
        .collect();
    let (_, v_direct) = variance(&direct);
    let cond_var_term = conditional_variance_term(ctx);
    let lambda_s = ctx.lambda_s();
    DispersionReport {
        v_tilde,
        v_direct,
        cond_var_term,
        lambda_s,
        identity_residual: (v_tilde - v_direct - lambda_s * lambda_s * cond_var_term).abs(),
    }
}

/// `E[Var[(S - Z)^2 | X, Z]]` by enumerating the noise.
pub fn conditional_variance_term(ctx: &TiltedContext) -> f64 {
    let sol = ctx.solution;
    let noise = ctx.model.noise();
    let mut total = 0.0;
    for (x, &px) in ctx.model.p_x().iter().enumerate() {
        for u in sol.support() {
            let (z, _) = sol.split(u);
            let offset = ctx.model.offset(x, z);
            let d = |w: f64| (offset + w).powi(2);
            let mean = noise.expect(d);
            let var = noise.expect(|w| (d(w) - mean).powi(2));
            total += px * sol.kernel.get(x, u) * var;
        }
    }
    total
}

/// Expected indirect and direct tilted informations `(E[j_tilde], E[j_X])`.
pub fn tilted_means(ctx: &TiltedContext) -> (f64, f64) {
    let indirect = joint_atoms(ctx)
        .map(|(p, x, u, w)| p * indirect_at(ctx, x, u, w))
        .sum();
    let direct = ctx
        .model
        .p_x()
        .iter()
        .enumerate()
        .map(|(x, p)| p * tilted_direct(ctx, x))
        .sum();
    (indirect, direct)
}

/// `max_x max_{u in support} |j_X(x) - (i(x;u) + tilt(x,u))|`.
pub fn support_identity_residual(ctx: &TiltedContext) -> f64 {
    let mut worst = 0.0_f64;
    for x in 0..ctx.model.nx() {
        let j = tilted_direct(ctx, x);
        for u in ctx.solution.support() {
            let i = info_density(ctx, x, u).expect("support point");
            worst = worst.max((j - (i + ctx.tilt(x, u))).abs());
        }
    }
    worst
}

/// `max_{x, u in support} |j_X(x) - E[j_tilde(S, x, u) | X = x]|`.
pub fn bridge_residual(ctx: &TiltedContext) -> f64 {
    let mut worst = 0.0_f64;
    for x in 0..ctx.model.nx() {
        let j = tilted_direct(ctx, x);
        for u in ctx.solution.support() {
            let avg: f64 = ctx
                .model
                .noise()
                .atoms()
                .map(|(w, p)| p * indirect_at(ctx, x, u, w))
                .sum();
            worst = worst.max((j - avg).abs());
        }
    }
    worst
}
