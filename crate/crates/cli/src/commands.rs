//! Command orchestration: each experiment stage reads its config blocks,
//! calls into the core library, and writes provenance-stamped artifacts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sddelab_core::action::path_action;
use sddelab_core::exitlab::{epsilon_sweep, SweepTable};
use sddelab_core::integrate::{
    detect_periodic_orbit, DomainSpec, OrbitDetectSettings, OrbitDetection,
};
use sddelab_core::models::{critical_delay, rightmost_root_real_part};
use sddelab_core::quasipotential::{exit_thresholds, ExitThresholds};
use sddelab_core::{CoefficientModel, GridSpec, HistorySegment, Orbit};

use crate::config::{
    self, DomainKind, ExperimentConfig, LoadedConfig, OrbitBlock,
};
use crate::csvio::{path_rows, Cell, CsvBuilder};
use crate::svg::{line_plot, Series};

/// Pipeline stages selectable on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lower")]
pub enum Command {
    /// Critical delay and rightmost characteristic roots over a τ ladder.
    Stability,
    /// Long-time attractor detection (equilibrium or periodic orbit).
    Orbit,
    /// Action decomposition of a path file.
    Action,
    /// Exit thresholds V̄ / V_lower with the minimizing escape path.
    Quasipotential,
    /// Monte Carlo exit-time sweep over ε against the thresholds.
    Sweep,
    /// The whole chain: stability → orbit → quasipotential → sweep.
    Full,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stability => "stability",
            Command::Orbit => "orbit",
            Command::Action => "action",
            Command::Quasipotential => "quasipotential",
            Command::Sweep => "sweep",
            Command::Full => "full",
        }
    }
}

/// Invocation parameters beyond the config file.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Output directory override (else [output].directory, else ".").
    pub out_dir: Option<PathBuf>,
    /// Seed override applied to both the Monte Carlo and optimizer seeds.
    pub seed: Option<u64>,
}

struct Stage<'a> {
    config: &'a ExperimentConfig,
    sha256: &'a str,
    config_dir: PathBuf,
    out_dir: PathBuf,
    seed_override: Option<u64>,
}

impl Stage<'_> {
    /// Monte Carlo seed: --seed, else [sweep].seed, else 0.
    fn mc_seed(&self) -> u64 {
        self.seed_override
            .or(self.config.sweep.as_ref().map(|s| s.seed))
            .unwrap_or(0)
    }

    /// Optimizer restart seed: --seed, else [quasipotential].seed, else 0.
    fn opt_seed(&self) -> u64 {
        self.seed_override
            .or(self.config.quasipotential.as_ref().and_then(|q| q.seed))
            .unwrap_or(0)
    }

    fn csv(&self, seed: u64) -> CsvBuilder {
        CsvBuilder::new(self.sha256, seed)
    }

    fn wants_format(&self, fmt: &str) -> bool {
        match &self.config.output {
            Some(o) => o.formats.iter().any(|f| f == fmt),
            None => true,
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn model(&self, command: &str) -> Result<(CoefficientModel, f64)> {
        let block = config::require(&self.config.model, "model", command)?;
        let model = block
            .build()
            .with_context(|| format!("building the [model] block for {command}"))?;
        Ok((model, block.tau()))
    }

    fn base_grid(&self, tau: f64, command: &str) -> Result<GridSpec> {
        let grid = config::require(&self.config.grid, "grid", command)?;
        GridSpec::new(tau, grid.step, 0.0)
            .with_context(|| "constructing the simulation grid from [grid]".to_string())
    }

    fn orbit_settings(&self, fallback_step: Option<f64>) -> OrbitDetectSettings {
        let block = self.config.orbit.clone().unwrap_or(OrbitBlock::default());
        let d = OrbitDetectSettings::default();
        OrbitDetectSettings {
            step: block
                .step
                .or(fallback_step)
                .or(self.config.grid.as_ref().map(|g| g.step))
                .unwrap_or(d.step),
            transient: block.transient.unwrap_or(d.transient),
            max_time: block.max_time.unwrap_or(d.max_time),
            level: block.level.unwrap_or(d.level),
            tolerance: block.tolerance.unwrap_or(d.tolerance),
            equilibrium_tolerance: block
                .equilibrium_tolerance
                .unwrap_or(d.equilibrium_tolerance),
        }
    }

    /// Build the exit domain. Equilibrium balls come straight from the
    /// config; orbit balls first detect the attractor on the [grid] step so
    /// every later stage shares one grid.
    fn domain(
        &self,
        model: &CoefficientModel,
        tau: f64,
        step: f64,
        command: &str,
    ) -> Result<DomainSpec> {
        let block = config::require(&self.config.domain, "domain", command)?;
        match block.kind {
            DomainKind::EquilibriumBall => {
                let mut center = block.center.clone();
                if center.is_empty() {
                    center = vec![0.0; model.dim_state()];
                }
                let orbit = Orbit::equilibrium(tau, step, &center)
                    .context("building the equilibrium center from [domain]")?;
                DomainSpec::equilibrium_ball(orbit, block.radius)
                    .context("building the equilibrium ball from [domain]")
            }
            DomainKind::OrbitBall => {
                let detection = self.detect(model, tau, Some(step))?;
                DomainSpec::orbit_ball(detection.orbit, block.radius)
                    .context("building the orbit ball from [domain]")
            }
        }
    }

    fn detect(
        &self,
        model: &CoefficientModel,
        tau: f64,
        force_step: Option<f64>,
    ) -> Result<OrbitDetection> {
        let settings = self.orbit_settings(force_step);
        let initial = self
            .config
            .orbit
            .as_ref()
            .and_then(|o| o.initial)
            .unwrap_or(1.0);
        let phi = HistorySegment::constant(tau, settings.step, &[initial])
            .context("building the starting history for orbit detection")?;
        detect_periodic_orbit(model, &phi, &settings).context("orbit detection stage")
    }
}

/// Run one command against a config file. Artifacts land in the output
/// directory; any error propagates (the binary maps it to a nonzero exit).
pub fn run(command: Command, opts: &RunOptions) -> Result<()> {
    let LoadedConfig { config, sha256 } = config::load(&opts.config_path)?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output.as_ref().map(|o| PathBuf::from(&o.directory)))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let config_dir = opts
        .config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let stage = Stage {
        config: &config,
        sha256: &sha256,
        config_dir,
        out_dir,
        seed_override: opts.seed,
    };

    match command {
        Command::Stability => cmd_stability(&stage).map(|_| ()),
        Command::Orbit => cmd_orbit(&stage).map(|_| ()),
        Command::Action => cmd_action(&stage),
        Command::Quasipotential => cmd_quasipotential(&stage).map(|_| ()),
        Command::Sweep => cmd_sweep(&stage, None).map(|_| ()),
        Command::Full => cmd_full(&stage),
    }
}

/// stability.csv: the critical delay and the rightmost characteristic root
/// over a ladder of delays around it.
fn cmd_stability(stage: &Stage<'_>) -> Result<f64> {
    let block = config::require(&stage.config.model, "model", "stability")?;
    let Some((a, b)) = block.linear_coefficients() else {
        bail!("the stability command needs [model] kind = \"linear\" (A, B coefficients)");
    };
    let tau0 = critical_delay(a, b).context("critical delay")?;

    let mut csv = stage.csv(stage.mc_seed());
    csv.comment("model_kind", "linear")
        .comment("a", a)
        .comment("b", b)
        .comment("critical_delay", tau0);
    csv.header(&["tau", "rightmost_root_real_part", "critical_delay"]);
    for k in 1..=20 {
        let tau = tau0 * (k as f64) / 10.0;
        let root = rightmost_root_real_part(a, b, tau)
            .with_context(|| format!("rightmost root at tau = {tau}"))?;
        csv.row(vec![Cell::F(tau), Cell::F(root), Cell::F(tau0)]);
    }
    csv.write(&stage.artifact("stability.csv"))?;
    Ok(tau0)
}

/// orbit.csv: the detected attractor, sampled over one grid period, with
/// detection diagnostics in the header comments.
fn cmd_orbit(stage: &Stage<'_>) -> Result<OrbitDetection> {
    let (model, tau) = stage.model("orbit")?;
    let detection = stage.detect(&model, tau, None)?;

    let mut csv = stage.csv(stage.mc_seed());
    csv.comment("equilibrium", detection.orbit.is_equilibrium())
        .comment("period", detection.orbit.period())
        .comment("period_estimate", detection.period_estimate)
        .comment("slowly_oscillating", detection.slowly_oscillating)
        .comment("closure_error", detection.closure_error)
        .comment("crossings_used", detection.crossings_used);
    path_rows(&mut csv, detection.orbit.path());
    csv.write(&stage.artifact("orbit.csv"))?;
    Ok(detection)
}

/// action.csv: per-step local-rate contributions of a stored path.
fn cmd_action(stage: &Stage<'_>) -> Result<()> {
    let (model, _) = stage.model("action")?;
    let block = config::require(&stage.config.action, "action", "action")?;
    let mut file = PathBuf::from(&block.path_file);
    if file.is_relative() {
        file = stage.config_dir.join(file);
    }
    let path = crate::csvio::load_path_csv(&file)?;
    let report = path_action(&model, &path).context("action evaluation")?;

    let mut csv = stage.csv(stage.mc_seed());
    csv.comment("path_file", block.path_file.as_str())
        .comment("total", report.value)
        .comment("control_l2_norm_squared", report.control.l2_norm_squared());
    csv.header(&["step", "time", "local_rate_times_h"]);
    let n_tau = path.grid().n_tau();
    for (k, &contribution) in report.per_step.iter().enumerate() {
        csv.row(vec![
            Cell::U(k as u64),
            Cell::F(path.time(n_tau + k)),
            Cell::F(contribution),
        ]);
    }
    csv.write(&stage.artifact("action.csv"))?;
    Ok(())
}

/// quasipotential.csv + minimizing_path.csv: exit thresholds over the η
/// ladder with the winning boundary problem's diagnostics and escape path.
fn cmd_quasipotential(stage: &Stage<'_>) -> Result<ExitThresholds> {
    let (model, tau) = stage.model("quasipotential")?;
    let grid_block = config::require(&stage.config.grid, "grid", "quasipotential")?;
    stage.base_grid(tau, "quasipotential")?;
    let qp = config::require(&stage.config.quasipotential, "quasipotential", "quasipotential")?;
    let domain = stage.domain(&model, tau, grid_block.step, "quasipotential")?;
    let settings = qp.to_settings(&grid_block.horizons, stage.opt_seed());

    let thresholds = exit_thresholds(&model, &domain, &qp.eta_sequence, &settings)
        .context("quasipotential stage")?;

    let mut csv = stage.csv(stage.opt_seed());
    let b = &thresholds.boundary;
    csv.comment("v_upper", thresholds.v_upper)
        .comment("v_lower", thresholds.v_lower)
        .comment("boundary_value", b.value)
        .comment("boundary_horizon", b.horizon)
        .comment("boundary_converged", b.diagnostics.converged)
        .comment("boundary_iterations", b.diagnostics.iterations)
        .comment("boundary_grad_norm", b.diagnostics.grad_norm)
        .comment("boundary_subproblems", b.diagnostics.subproblems);
    csv.header(&["record", "label", "value"]);
    for &(eta, v) in &thresholds.per_eta_upper {
        csv.row(vec![Cell::from("eta_upper"), Cell::F(eta), Cell::F(v)]);
    }
    for &(eta, v) in &thresholds.per_eta_lower {
        csv.row(vec![Cell::from("eta_lower"), Cell::F(eta), Cell::F(v)]);
    }
    for &(horizon, v) in &b.per_horizon {
        csv.row(vec![Cell::from("horizon"), Cell::F(horizon), Cell::OptF(v)]);
    }
    csv.write(&stage.artifact("quasipotential.csv"))?;

    let mut path_csv = stage.csv(stage.opt_seed());
    path_csv.comment("action_value", b.value);
    path_rows(&mut path_csv, &b.path);
    path_csv.write(&stage.artifact("minimizing_path.csv"))?;
    Ok(thresholds)
}

/// sweep.csv + sweep.svg: ε·log E[ρ] against the exit thresholds. When no
/// thresholds are passed in or configured, they are computed first from the
/// [quasipotential] block.
fn cmd_sweep(stage: &Stage<'_>, chained: Option<(f64, f64)>) -> Result<SweepTable> {
    let (model, tau) = stage.model("sweep")?;
    let grid_block = config::require(&stage.config.grid, "grid", "sweep")?;
    let grid = stage.base_grid(tau, "sweep")?;
    let sweep = config::require(&stage.config.sweep, "sweep", "sweep")?;
    let domain = stage.domain(&model, tau, grid_block.step, "sweep")?;

    let thresholds = match sweep.thresholds {
        Some([lo, hi]) => (lo, hi),
        None => match chained {
            Some(t) => t,
            None => {
                let qp = config::require(
                    &stage.config.quasipotential,
                    "quasipotential",
                    "sweep (to compute thresholds)",
                )?;
                let settings = qp.to_settings(&grid_block.horizons, stage.opt_seed());
                let th = exit_thresholds(&model, &domain, &qp.eta_sequence, &settings)
                    .context("quasipotential stage (thresholds for the sweep)")?;
                (th.v_lower, th.v_upper)
            }
        },
    };

    let phi = match domain.center().equilibrium_value() {
        Some(value) => HistorySegment::constant(tau, grid_block.step, value)?,
        None => domain.center().segment(0).to_history(),
    };
    let table = epsilon_sweep(
        &model,
        &phi,
        &domain,
        &sweep.epsilons,
        sweep.trials,
        sweep.t_max,
        &grid,
        stage.mc_seed(),
        thresholds,
        sweep.alpha,
    )
    .context("exit-time sweep stage")?;

    if stage.wants_format("csv") {
        let mut csv = stage.csv(stage.mc_seed());
        csv.comment("v_lower", table.thresholds.0)
            .comment("v_upper", table.thresholds.1)
            .comment("alpha", table.alpha)
            .comment("trend_slope", table.trend_slope)
            .comment("t_max", sweep.t_max);
        for (eps, reason) in &table.failed {
            csv.comment("failed", format!("{} ({reason})", crate::csvio::fmt_f64(*eps)).as_str());
        }
        csv.header(&[
            "epsilon",
            "trials",
            "censored_fraction",
            "mean_exit",
            "mean_ci_low",
            "mean_ci_high",
            "eps_log_mean",
            "window_hit_fraction",
        ]);
        for (row, &hits) in table.rows.iter().zip(&table.window_hits) {
            csv.row(vec![
                Cell::F(row.epsilon),
                Cell::U(row.trials as u64),
                Cell::F(row.censored_fraction),
                Cell::F(row.mean_exit),
                Cell::F(row.mean_ci_low),
                Cell::F(row.mean_ci_high),
                Cell::F(row.eps_log_mean),
                Cell::F(hits),
            ]);
        }
        csv.write(&stage.artifact("sweep.csv"))?;
    }

    if stage.wants_format("svg") {
        let curve: Vec<(f64, f64)> =
            table.rows.iter().map(|r| (r.epsilon, r.eps_log_mean)).collect();
        let (eps_min, eps_max) = table
            .rows
            .iter()
            .map(|r| r.epsilon)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e), hi.max(e))
            });
        let series = vec![
            Series::new("eps_log_mean_exit", curve),
            Series::new(
                "v_upper",
                vec![(eps_min, table.thresholds.1), (eps_max, table.thresholds.1)],
            ),
            Series::new(
                "v_lower",
                vec![(eps_min, table.thresholds.0), (eps_max, table.thresholds.0)],
            ),
        ];
        let svg = line_plot(
            "Exit-time scaling against the quasipotential window",
            "epsilon",
            "epsilon * log mean exit time",
            &series,
        );
        std::fs::write(stage.artifact("sweep.svg"), svg)
            .with_context(|| "writing sweep.svg".to_string())?;
    }
    Ok(table)
}

/// The full pipeline. Stability runs only for the linear kind (the ladder
/// needs the (A, B) coefficients); the quasipotential thresholds feed the
/// sweep unless [sweep].thresholds overrides them.
fn cmd_full(stage: &Stage<'_>) -> Result<()> {
    let block = config::require(&stage.config.model, "model", "full")?;
    if block.linear_coefficients().is_some() {
        cmd_stability(stage)?;
    }
    cmd_orbit(stage)?;
    let thresholds = cmd_quasipotential(stage)?;
    cmd_sweep(stage, Some((thresholds.v_lower, thresholds.v_upper)))?;
    Ok(())
}
