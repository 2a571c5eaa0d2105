//! Monte Carlo exit-time experiments against quasipotential thresholds.
//!
//! The exit theorem being probed: for a stable orbit's ball domain,
//! ε·log E[ρ] is squeezed between V_lower and V̄ as ε → 0, and the exit
//! time concentrates in the window (e^{(V_lower-α)/ε}, e^{(V̄+α)/ε}) for
//! every α > 0. The sweep estimates E[ρ] across decreasing ε, reports the
//! window mass at a concrete α, and flags trends.
//!
//! Trials parallelize across workers; every trial owns a stream derived
//! from (seed, trial index), and aggregation is a fixed-order sequential
//! reduction, so results are bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{first_exit, solve_dde, Control, DomainSpec};
use crate::models::CoefficientModel;
use crate::rng::derive_seed;
use crate::segments::{GridSpec, HistorySegment};

/// One ε row of the sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub epsilon: f64,
    pub trials: usize,
    pub censored_fraction: f64,
    /// Sample mean of exit times over uncensored trials.
    pub mean_exit: f64,
    pub mean_ci_low: f64,
    pub mean_ci_high: f64,
    /// ε·log(mean_exit), always from the mean, never the mean of logs.
    pub eps_log_mean: f64,
}

/// Sweep results with threshold context.
#[derive(Clone, Debug)]
pub struct SweepTable {
    /// Rows sorted by decreasing ε (input order, validated decreasing).
    pub rows: Vec<SweepRow>,
    /// Fraction of trials (per row) whose exit time landed in the window
    /// (e^{(V_lower-α)/ε}, e^{(V̄+α)/ε}).
    pub window_hits: Vec<f64>,
    /// (V_lower, V̄).
    pub thresholds: (f64, f64),
    pub alpha: f64,
    /// Least-squares slope of eps_log_mean against ε over computed rows.
    pub trend_slope: f64,
    /// ε values whose rows were unusable, with the reason.
    pub failed: Vec<(f64, String)>,
}

/// Importance-sampling comparison for P(ρ ≤ T).
#[derive(Clone, Copy, Debug)]
pub struct ImportanceReport {
    pub plain_estimate: f64,
    pub plain_variance: f64,
    pub tilted_estimate: f64,
    pub tilted_variance: f64,
    /// plain/tilted per-trial variance when both are positive; NaN otherwise.
    pub variance_ratio: f64,
    pub trials: usize,
    /// No tilted trial exited: the tilt misses the exit mechanism.
    pub degenerate_tilt: bool,
}

/// Check that the deterministic flow from φ stays inside the domain over a
/// probe horizon: the computable stand-in for membership in the domain's
/// basin of attraction.
fn check_basin(
    model: &CoefficientModel,
    phi: &HistorySegment,
    domain: &DomainSpec,
    grid: &GridSpec,
    t_max: f64,
) -> Result<()> {
    let tau = grid.tau();
    let probe_horizon = (8.0 * tau).max(8.0).min(t_max);
    let probe_grid = grid.with_horizon(probe_horizon)?;
    let path = solve_dde(model, phi, &probe_grid)?;
    let stride = probe_grid.n_horizon().div_ceil(512).max(1);
    let mut k = 0;
    loop {
        let k_eff = k.min(probe_grid.n_horizon());
        if !domain.contains(&path.segment_view(k_eff))? {
            return Err(Error::Argument(format!(
                "initial history is not in the domain's stable set: the noise-free flow \
                 leaves the domain by t = {}",
                k_eff as f64 * probe_grid.step()
            )));
        }
        if k_eff == probe_grid.n_horizon() {
            return Ok(());
        }
        k += stride;
    }
}

/// Exit times (None = censored at t_max) for `trials` independent runs.
#[allow(clippy::too_many_arguments)]
fn run_exit_trials(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    domain: &DomainSpec,
    trials: usize,
    t_max: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            first_exit(model, phi, epsilon, domain, t_max, grid, derive_seed(seed, i as u64), None)
                .map(|rec| rec.exit_time)
        })
        .collect()
}

fn summarize(epsilon: f64, times: &[Option<f64>]) -> Result<SweepRow> {
    let trials = times.len();
    let uncensored: Vec<f64> = times.iter().flatten().copied().collect();
    let censored_fraction = (trials - uncensored.len()) as f64 / trials as f64;
    if censored_fraction > 0.5 {
        return Err(Error::UnusableEstimate { censored: censored_fraction });
    }
    let n = uncensored.len() as f64;
    let mean = uncensored.iter().sum::<f64>() / n;
    let var = uncensored.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let half = 1.96 * (var / n).sqrt();
    Ok(SweepRow {
        epsilon,
        trials,
        censored_fraction,
        mean_exit: mean,
        mean_ci_low: mean - half,
        mean_ci_high: mean + half,
        eps_log_mean: epsilon * mean.ln(),
    })
}

/// Estimate E[ρ] at one ε: `trials` independent first-exit runs, sample
/// mean over uncensored trials with a normal 95% CI. Errors when more than
/// half the trials are censored (raise t_max or ε) or when φ is not in the
/// domain's stable set.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mean_exit(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    domain: &DomainSpec,
    trials: usize,
    t_max: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<SweepRow> {
    if trials < 2 {
        return Err(Error::Argument("need at least 2 trials".into()));
    }
    check_basin(model, phi, domain, grid, t_max)?;
    let times = run_exit_trials(model, phi, epsilon, domain, trials, t_max, grid, seed)?;
    summarize(epsilon, &times)
}

/// Sweep ε downward, comparing ε·log E[ρ] against thresholds
/// (V_lower, V̄). `alpha` defaults to 0.3·V̄. Pre-checks that t_max clears
/// the window's upper edge e^{(V̄+α)/ε} at the smallest ε. Per-ε unusable
/// estimates are reported in `failed` without aborting the sweep.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sweep(
    model: &CoefficientModel,
    phi: &HistorySegment,
    domain: &DomainSpec,
    epsilons: &[f64],
    trials: usize,
    t_max: f64,
    grid: &GridSpec,
    seed: u64,
    thresholds: (f64, f64),
    alpha: Option<f64>,
) -> Result<SweepTable> {
    let (v_lower, v_upper) = thresholds;
    if epsilons.is_empty() {
        return Err(Error::Argument("epsilon list is empty".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Argument("epsilons must be positive and strictly decreasing".into()));
    }
    if !(v_upper >= v_lower && v_lower >= 0.0) {
        return Err(Error::Argument(format!(
            "thresholds must satisfy 0 <= V_lower <= V_upper, got ({v_lower}, {v_upper})"
        )));
    }
    let alpha = alpha.unwrap_or(0.3 * v_upper);
    let eps_min = *epsilons.last().unwrap();
    let window_top = ((v_upper + alpha) / eps_min).exp();
    if t_max < window_top {
        return Err(Error::Argument(format!(
            "t_max = {t_max} is below the exit window's upper edge {window_top:.3} at \
             epsilon = {eps_min}; censoring would bias the window mass"
        )));
    }
    check_basin(model, phi, domain, grid, t_max)?;

    let mut rows = Vec::new();
    let mut window_hits = Vec::new();
    let mut failed = Vec::new();
    for (j, &epsilon) in epsilons.iter().enumerate() {
        let times = run_exit_trials(
            model,
            phi,
            epsilon,
            domain,
            trials,
            t_max,
            grid,
            derive_seed(seed, 0x5eed_0000 + j as u64),
        )?;
        match summarize(epsilon, &times) {
            Ok(row) => {
                let lo = ((v_lower - alpha) / epsilon).exp();
                let hi = ((v_upper + alpha) / epsilon).exp();
                let hits = times
                    .iter()
                    .filter(|t| t.map(|t| t > lo && t < hi).unwrap_or(false))
                    .count();
                rows.push(row);
                window_hits.push(hits as f64 / trials as f64);
            }
            Err(e) => failed.push((epsilon, e.to_string())),
        }
    }
    // least-squares slope of eps_log_mean against epsilon
    let trend_slope = if rows.len() >= 2 {
        let n = rows.len() as f64;
        let mx = rows.iter().map(|r| r.epsilon).sum::<f64>() / n;
        let my = rows.iter().map(|r| r.eps_log_mean).sum::<f64>() / n;
        let sxy: f64 = rows.iter().map(|r| (r.epsilon - mx) * (r.eps_log_mean - my)).sum();
        let sxx: f64 = rows.iter().map(|r| (r.epsilon - mx) * (r.epsilon - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    Ok(SweepTable { rows, window_hits, thresholds, alpha, trend_slope, failed })
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// Estimate P(ρ ≤ T) two ways: plain Monte Carlo, and under the tilted law
/// with Girsanov reweighting (both unbiased). The tilt is typically the
/// control recovered from the quasipotential minimizer; it acts on its own
/// horizon and is zero afterwards.
#[allow(clippy::too_many_arguments)]
pub fn importance_sampled_exit_prob(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    domain: &DomainSpec,
    horizon: f64,
    tilt: &Control,
    trials: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if trials < 2 {
        return Err(Error::Argument("need at least 2 trials".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Argument("importance sampling requires epsilon > 0".into()));
    }
    let grid = *tilt.grid();
    if !phi.grid().compatible(&grid) {
        return Err(Error::Grid("tilt control grid incompatible with the history".into()));
    }

    let plain: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            first_exit(
                model,
                phi,
                epsilon,
                domain,
                horizon,
                &grid,
                derive_seed(seed, 2 * i as u64),
                None,
            )
            .map(|rec| if rec.exit_time.is_some() { 1.0 } else { 0.0 })
        })
        .collect::<Result<_>>()?;

    let tilted: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            first_exit(
                model,
                phi,
                epsilon,
                domain,
                horizon,
                &grid,
                derive_seed(seed, 2 * i as u64 + 1),
                Some(tilt),
            )
            .map(|rec| {
                if rec.exit_time.is_some() {
                    rec.log_weight.exp()
                } else {
                    0.0
                }
            })
        })
        .collect::<Result<_>>()?;

    let (plain_estimate, plain_variance) = mean_and_variance(&plain);
    let (tilted_estimate, tilted_variance) = mean_and_variance(&tilted);
    let degenerate_tilt = tilted.iter().all(|&w| w == 0.0);
    let variance_ratio = if plain_variance > 0.0 && tilted_variance > 0.0 {
        plain_variance / tilted_variance
    } else {
        f64::NAN
    };
    Ok(ImportanceReport {
        plain_estimate,
        plain_variance,
        tilted_estimate,
        tilted_variance,
        variance_ratio,
        trials,
        degenerate_tilt,
    })
}
