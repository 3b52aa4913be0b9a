use thiserror::Error;

use crate::rd::RDSolution;

/// The distortion constraint that turned out slack at a joint optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Hidden-source (surrogate squared-error) constraint.
    HiddenSource,
    /// Observed-source (`d_x`) constraint.
    ObservedSource,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::HiddenSource => f.write_str("d_s"),
            Constraint::ObservedSource => f.write_str("d_x"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model field `{key}`: {reason}")]
    InvalidModel { key: &'static str, reason: String },

    #[error("noise violates moment assumption {assumption} (value {value:e})")]
    MomentViolation {
        assumption: &'static str,
        value: f64,
    },

    #[error("noise is degenerate: Var[W^2] = {var_w2:e} must be positive")]
    DegenerateNoise { var_w2: f64 },

    #[error("sequence lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("symbol index {index} outside alphabet of size {size}")]
    SymbolOutOfRange { index: usize, size: usize },

    #[error("value {value} outside admissible range ({lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("solver did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Option<Box<RDSolution>>,
    },

    #[error("model has no observed-source reconstruction alphabet / d_x table")]
    MissingDxTable,

    #[error("degenerate target: the {slack} constraint is slack at the optimum")]
    Degenerate { slack: Constraint },

    #[error("distortion {d} is below the minimum {d_min} reachable with the given output law")]
    Infeasible { d: f64, d_min: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero marginal mass at reproduction index {index}")]
    ZeroMarginal { index: usize },

    #[error("distribution support grew to {atoms} atoms (cap {cap})")]
    SupportOverflow { atoms: usize, cap: usize },

    #[error("codebook needs {needed} symbols, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
