//! Identity suite: numerical checks that tie the solver output to the tilted
//! informations and dispersions. Every check reports a residual and the
//! tolerance it is held to.

use serde::Serialize;

use crate::error::Result;
use crate::model::{d_min_max, validate_model, SourceModel};
use crate::rd::{solve_for_distortion, solve_joint_or_degenerate, RDSolution};
use crate::tilted::{
    bridge_residual, dispersion, lambda_capital, support_identity_residual, tilted_direct,
    tilted_means, TiltedContext,
};
use crate::Constraint;

pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, residual: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tol,
            pass: residual <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub d_s: f64,
    pub d_x: Option<f64>,
    /// Which constraint was slack when the two-constraint problem degenerated.
    pub joint_slack: Option<Constraint>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks
            .iter()
            .max_by(|a, b| (a.residual / a.tol).total_cmp(&(b.residual / b.tol)))
    }
}

fn kernel_checks(prefix: &str, model: &SourceModel, sol: &RDSolution, out: &mut Vec<Check>) {
    let p_x = model.p_x();
    let mut row_err = 0.0_f64;
    for x in 0..sol.kernel.rows() {
        let s: f64 = sol.kernel.row(x).iter().sum();
        row_err = row_err.max((s - 1.0).abs());
    }
    out.push(Check::new(format!("{prefix}kernel_rows_normalized"), row_err, IDENTITY_TOL));
    let law = sol.kernel.output_law(p_x);
    let marg = law
        .iter()
        .zip(&sol.marginal)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(Check::new(format!("{prefix}output_law_matches_marginal"), marg, IDENTITY_TOL));
    let mut mi = 0.0;
    for (x, &p) in p_x.iter().enumerate() {
        for (u, &k) in sol.kernel.row(x).iter().enumerate() {
            if k > 0.0 {
                mi += p * k * (k / sol.marginal[u]).ln();
            }
        }
    }
    out.push(Check::new(
        format!("{prefix}rate_equals_mutual_information"),
        (mi - sol.rate).abs(),
        IDENTITY_TOL,
    ));
}

fn tilted_checks(prefix: &str, ctx: &TiltedContext, out: &mut Vec<Check>) {
    let rate = ctx.solution.rate;
    let (e_ind, e_dir) = tilted_means(ctx);
    out.push(Check::new(format!("{prefix}mean_indirect_tilted_equals_rate"), (e_ind - rate).abs(), IDENTITY_TOL));
    out.push(Check::new(format!("{prefix}mean_direct_tilted_equals_rate"), (e_dir - rate).abs(), IDENTITY_TOL));
    out.push(Check::new(format!("{prefix}support_identity"), support_identity_residual(ctx), IDENTITY_TOL));
    out.push(Check::new(format!("{prefix}conditional_mean_bridge"), bridge_residual(ctx), IDENTITY_TOL));
    let rep = dispersion(ctx);
    out.push(Check::new(format!("{prefix}total_variance"), rep.identity_residual, IDENTITY_TOL));
    out.push(Check::new(
        format!("{prefix}dispersion_order"),
        (rep.v_direct - rep.v_tilde).max(0.0),
        IDENTITY_TOL,
    ));
    if ctx.lambda_s() > 0.0 {
        let v1 = ctx.moments().v1(ctx.d_s);
        out.push(Check::new(
            format!("{prefix}conditional_variance_linkage"),
            (rep.cond_var_term - v1).abs(),
            IDENTITY_TOL,
        ));
    }
}

/// Runs the suite at `d_s` and, if given and the model has a `d_x` table,
/// at `(d_s, d_x)`.
pub fn verify_suite(model: &SourceModel, d_s: f64, d_x: Option<f64>) -> Result<VerifyReport> {
    validate_model(model)?;
    let mut checks = Vec::new();
    let sol = solve_for_distortion(model, d_s)?;
    checks.push(Check::new("distortion_achieved", (sol.d_s_achieved - d_s).abs(), crate::rd::DISTORTION_TOL));
    kernel_checks("", model, &sol, &mut checks);
    let ctx = TiltedContext::new(model, &sol, d_s, None)?;
    tilted_checks("", &ctx, &mut checks);
    let mut cap = 0.0_f64;
    for x in 0..model.nx() {
        let l = lambda_capital(model, &sol.marginal, d_s, sol.lambda_s, x)?;
        cap = cap.max((l - tilted_direct(&ctx, x)).abs());
    }
    checks.push(Check::new("lambda_capital_at_optimum", cap, IDENTITY_TOL));

    let mut joint_slack = None;
    if let (Some(dx), true) = (d_x, model.has_dx()) {
        let (joint, slack) = solve_joint_or_degenerate(model, d_s, dx)?;
        joint_slack = slack;
        // With the hidden-source constraint slack the solution sits at its
        // own achieved d_s.
        let level_s = match slack {
            Some(Constraint::HiddenSource) => joint.d_s_achieved,
            _ => d_s,
        };
        kernel_checks("joint_", model, &joint, &mut checks);
        let ctx = TiltedContext::new(model, &joint, level_s, Some(dx))?;
        tilted_checks("joint_", &ctx, &mut checks);
    }
    Ok(VerifyReport {
        d_s,
        d_x,
        joint_slack,
        checks,
    })
}

/// Interior point halfway between the extreme surrogate distortions.
pub fn default_d_s(model: &SourceModel) -> f64 {
    let (lo, hi) = d_min_max(model);
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn suites_pass() {
        let r = verify_suite(&presets::bes(), 0.375, Some(0.3)).unwrap();
        assert_eq!(r.joint_slack, Some(Constraint::ObservedSource));
        assert!(r.all_pass(), "{:?}", r.worst());
        let q = presets::quaternary();
        let r = verify_suite(&q, default_d_s(&q), None).unwrap();
        assert!(r.all_pass(), "{:?}", r.worst());
    }
}
