//! Experiment configuration (TOML).
//!
//! ```toml
//! model = "models/bes.toml"   # relative to this file
//! seed = 7
//!
//! [simulate]
//! d_s = 0.375
//! k = [32, 64, 128]
//! trials = 100000
//! codebook_size = { rule = "second_order", epsilon = 0.1 }
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use noisyrd::bounds::BoundMethod;
use noisyrd::simulator::Encoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Nats,
    Bits,
}

impl Unit {
    /// Factor converting nats to this unit.
    pub fn scale(self) -> f64 {
        match self {
            Unit::Nats => 1.0,
            Unit::Bits => std::f64::consts::LOG2_E,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Nats => "nats",
            Unit::Bits => "bits",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub unit: Option<Unit>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub rd_curve: Option<RdCurveConfig>,
    #[serde(default)]
    pub dispersion: Option<DispersionConfig>,
    #[serde(default)]
    pub approx: Option<ApproxConfig>,
    #[serde(default)]
    pub bound: Option<BoundConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdCurveConfig {
    #[serde(default)]
    pub d_s: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<Grid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub d_s: f64,
    #[serde(default)]
    pub d_x: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxConfig {
    pub d_s: f64,
    #[serde(default)]
    pub d_x: Option<f64>,
    pub epsilon: f64,
    pub k: Vec<u64>,
    #[serde(default)]
    pub logk_coeff: f64,
}

/// How the codebook size `M` is chosen.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeRule {
    /// `M = ceil(exp(k R + sqrt(k V) Q^{-1}(epsilon) + c ln k))`.
    SecondOrder {
        epsilon: f64,
        #[serde(default)]
        logk_coeff: f64,
    },
    Fixed { m: u64 },
    /// `M = ceil(exp(value))`.
    LogNats { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Random-coding bound for the hidden-source constraint.
    #[default]
    Single,
    /// Two-constraint bound.
    Joint,
    /// Relaxed single-constraint bound with its unrelaxed counterpart.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    Exact,
    Mc,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default)]
    pub kind: BoundKind,
    pub d_s: f64,
    #[serde(default)]
    pub d_x: Option<f64>,
    pub k: usize,
    pub codebook_size: SizeRule,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default)]
    pub outer_samples: Option<usize>,
    #[serde(default)]
    pub inner_samples: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl BoundConfig {
    pub fn bound_method(&self) -> anyhow::Result<BoundMethod> {
        Ok(match self.method {
            MethodName::Exact => BoundMethod::Exact,
            MethodName::Mc => BoundMethod::MonteCarlo {
                outer: self.outer_samples.context("bound.outer_samples is required for method = \"mc\"")?,
                inner: self.inner_samples.context("bound.inner_samples is required for method = \"mc\"")?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Codebook search when `M * k` fits the budget, ensemble sampling otherwise.
    #[default]
    Auto,
    Codebook,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderName {
    #[default]
    MinSurrogate,
    MinPi,
}

impl From<EncoderName> for Encoder {
    fn from(e: EncoderName) -> Self {
        match e {
            EncoderName::MinSurrogate => Encoder::MinSurrogate,
            EncoderName::MinPi => Encoder::MinPi,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub d_s: f64,
    #[serde(default)]
    pub d_x: Option<f64>,
    pub k: Vec<usize>,
    pub codebook_size: SizeRule,
    pub trials: u64,
    #[serde(default)]
    pub encoder: EncoderName,
    #[serde(default)]
    pub mode: SimMode,
    /// Largest `M * k` searched explicitly under `mode = "auto"`.
    #[serde(default = "default_search_budget")]
    pub search_budget: u128,
}

fn default_search_budget() -> u128 {
    1 << 20
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub d_s: Option<f64>,
    #[serde(default)]
    pub d_x: Option<f64>,
}

/// Parsed configuration with its source bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub model_path: PathBuf,
    /// Directory relative paths in the config resolve against.
    pub config_dir: PathBuf,
    pub config_bytes: Vec<u8>,
    pub model_bytes: Vec<u8>,
}

pub fn load(path: &Path) -> anyhow::Result<LoadedConfig> {
    let config_bytes =
        std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let text = std::str::from_utf8(&config_bytes).context("config is not UTF-8")?;
    let config: ExperimentConfig =
        toml::from_str(text).with_context(|| format!("invalid config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let model_path = if config.model.is_absolute() {
        config.model.clone()
    } else {
        base.join(&config.model)
    };
    if !model_path.exists() {
        bail!("model file {} does not exist", model_path.display());
    }
    let model_bytes = std::fs::read(&model_path)
        .with_context(|| format!("cannot read model {}", model_path.display()))?;
    Ok(LoadedConfig {
        config,
        model_path,
        config_dir: base.to_path_buf(),
        config_bytes,
        model_bytes,
    })
}
