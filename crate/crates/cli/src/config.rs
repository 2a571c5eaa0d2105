//! Typed experiment configuration. The file format is TOML: one table per
//! pipeline stage, all optional at parse time; each command checks for the
//! blocks it needs and reports the missing table by name. See the README
//! for a complete annotated example.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use sddelab_core::models::{
    build_expression_model, build_linear_model, build_tanh_feedback_model, ExpressionModelSpec,
};
use sddelab_core::quasipotential::OptimizerSettings;
use sddelab_core::{CoefficientModel, LinearDelayParams};

/// Top-level config: every block is optional so that a config can carry
/// exactly what its command needs.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelBlock>,
    pub grid: Option<GridBlock>,
    pub domain: Option<DomainBlock>,
    pub quasipotential: Option<QuasipotentialBlock>,
    pub sweep: Option<SweepBlock>,
    pub output: Option<OutputBlock>,
    pub action: Option<ActionBlock>,
    pub orbit: Option<OrbitBlock>,
}

/// Model declaration. `kind` picks the builder; the remaining keys are that
/// builder's parameters.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBlock {
    /// Drift -A·x(t) - B·x(t-τ), constant noise amplitude.
    Linear { tau: f64, a: f64, b: f64, sigma0: f64 },
    /// Drift -tanh(x(t-τ)), constant noise amplitude.
    NegativeFeedback { tau: f64, sigma0: f64 },
    /// Scalar drift/diffusion given as expression text over `x`, `x_tau`
    /// and `x_lag1`, ... The contract constants are declared, not derived.
    Expression {
        tau: f64,
        drift: String,
        diffusion: String,
        #[serde(default)]
        extra_lags: Vec<f64>,
        kappa1: f64,
        kappa2: f64,
        ellipticity_c: Option<f64>,
    },
}

impl ModelBlock {
    pub fn tau(&self) -> f64 {
        match self {
            ModelBlock::Linear { tau, .. } => *tau,
            ModelBlock::NegativeFeedback { tau, .. } => *tau,
            ModelBlock::Expression { tau, .. } => *tau,
        }
    }

    pub fn build(&self) -> Result<CoefficientModel> {
        let model = match self {
            ModelBlock::Linear { tau, a, b, sigma0 } => {
                build_linear_model(LinearDelayParams { a: *a, b: *b, sigma0: *sigma0 }, *tau)?
            }
            ModelBlock::NegativeFeedback { tau, sigma0 } => {
                build_tanh_feedback_model(*tau, *sigma0)?
            }
            ModelBlock::Expression {
                tau,
                drift,
                diffusion,
                extra_lags,
                kappa1,
                kappa2,
                ellipticity_c,
            } => build_expression_model(&ExpressionModelSpec {
                tau: *tau,
                drift: drift.clone(),
                diffusion: diffusion.clone(),
                extra_lags: extra_lags.clone(),
                kappa1: *kappa1,
                kappa2: *kappa2,
                ellipticity_c: *ellipticity_c,
            })?,
        };
        Ok(model)
    }

    /// The linear coefficients when this is the linear kind.
    pub fn linear_coefficients(&self) -> Option<(f64, f64)> {
        match self {
            ModelBlock::Linear { a, b, .. } => Some((*a, *b)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Node spacing h; must divide τ.
    pub step: f64,
    /// Candidate horizons for the quasipotential search.
    pub horizons: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// Ball of segments around a constant equilibrium segment.
    EquilibriumBall,
    /// Ball of segments around a detected periodic orbit.
    OrbitBall,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub kind: DomainKind,
    pub radius: f64,
    /// Equilibrium value (per state coordinate). Ignored for orbit balls,
    /// whose center comes from orbit detection.
    #[serde(default)]
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialBlock {
    /// Strictly decreasing boundary enlargements, each in (0, radius).
    pub eta_sequence: Vec<f64>,
    pub max_iterations: Option<usize>,
    pub gradient_tolerance: Option<f64>,
    pub memory: Option<usize>,
    pub shrink: Option<f64>,
    pub sufficient_decrease: Option<f64>,
    pub restarts: Option<usize>,
    /// Seed for restart perturbations (the command-line --seed overrides).
    pub seed: Option<u64>,
    pub max_start_phases: Option<usize>,
}

impl QuasipotentialBlock {
    /// Optimizer settings with the horizon grid and effective seed filled in.
    pub fn to_settings(&self, horizons: &[f64], seed: u64) -> OptimizerSettings {
        let d = OptimizerSettings::default();
        OptimizerSettings {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            gradient_tolerance: self.gradient_tolerance.unwrap_or(d.gradient_tolerance),
            memory: self.memory.unwrap_or(d.memory),
            shrink: self.shrink.unwrap_or(d.shrink),
            sufficient_decrease: self.sufficient_decrease.unwrap_or(d.sufficient_decrease),
            horizon_grid: horizons.to_vec(),
            restarts: self.restarts.unwrap_or(d.restarts),
            seed,
            max_start_phases: self.max_start_phases.unwrap_or(d.max_start_phases),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Strictly decreasing noise levels.
    pub epsilons: Vec<f64>,
    pub trials: usize,
    /// Per-trial time budget; trials still inside at t_max are censored.
    pub t_max: f64,
    /// Window half-width in the exit-time comparison; defaults to 0.3·V̄.
    pub alpha: Option<f64>,
    pub seed: u64,
    /// Optional (V_lower, V̄) override; when absent the sweep computes the
    /// thresholds from the [quasipotential] block.
    pub thresholds: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    /// Artifact families to emit; any of "csv", "svg".
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "svg".into()]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBlock {
    /// Path CSV consumed by the action command, resolved relative to the
    /// config file's directory when not absolute.
    pub path_file: String,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OrbitBlock {
    /// Detection grid step; defaults to [grid].step when present, else the
    /// detector's default.
    pub step: Option<f64>,
    pub transient: Option<f64>,
    pub max_time: Option<f64>,
    /// Poincaré level whose up-crossings delimit cycles.
    pub level: Option<f64>,
    pub tolerance: Option<f64>,
    pub equilibrium_tolerance: Option<f64>,
    /// Constant starting history for the detection integration.
    pub initial: Option<f64>,
}

/// Parsed config plus the SHA-256 of the raw file bytes (hex), which every
/// artifact records so outputs can be traced to their exact input.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let text = std::str::from_utf8(&bytes)
        .with_context(|| format!("config file {} is not UTF-8", path.display()))?;
    let config: ExperimentConfig = toml::from_str(text)
        .with_context(|| format!("parsing config file {}", path.display()))?;
    Ok(LoadedConfig { config, sha256: sha256_hex(&bytes) })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// Fetch a block or fail naming the missing table and the command that
/// needed it.
pub fn require<'a, T>(block: &'a Option<T>, name: &str, command: &str) -> Result<&'a T> {
    match block {
        Some(b) => Ok(b),
        None => bail!("config block [{name}] is required for the {command} command"),
    }
}
