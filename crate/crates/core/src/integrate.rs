//! Time stepping: deterministic delay equations, controlled skeletons,
//! Euler-Maruyama simulation (plain and Girsanov-reweighted), first-exit
//! sampling, periodic orbit detection, and attraction checks.
//!
//! All schemes are explicit Euler with the step h dividing the delay τ, so
//! delayed reads are exact grid lookups. Exit is detected at grid
//! resolution; the O(√h) detection bias is a study parameter, not corrected
//! here.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::CoefficientModel;
use crate::rng::stream_rng;
use crate::segments::{sup_distance_views, GridSpec, HistorySegment, Orbit, PathGrid, SegmentView};

/// States with Euclidean norm above this abort the integration.
const BLOWUP_NORM: f64 = 1e10;

/// Piecewise-constant control u: [0, T] → R^m, value `values[k]` on
/// [t_k, t_{k+1}). An optional L² bound N asserts Σ|u_k|²h ≤ N.
#[derive(Clone, Debug)]
pub struct Control {
    grid: GridSpec,
    dim: usize,
    values: Vec<f64>,
    norm_bound: Option<f64>,
}

impl Control {
    pub fn new(grid: GridSpec, dim: usize, values: Vec<f64>, norm_bound: Option<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("control dimension must be positive".into()));
        }
        if values.len() != grid.n_horizon() * dim {
            return Err(Error::Shape(format!(
                "control needs {} values ({} steps x dim {}), got {}",
                grid.n_horizon() * dim,
                grid.n_horizon(),
                dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("control values must be finite".into()));
        }
        let ctrl = Control { grid, dim, values, norm_bound };
        if let Some(n) = norm_bound {
            let l2 = ctrl.l2_norm_squared();
            if l2 > n * (1.0 + 1e-9) {
                return Err(Error::Argument(format!(
                    "control squared L2 norm {l2} exceeds declared bound {n}"
                )));
            }
        }
        Ok(ctrl)
    }

    pub fn zero(grid: GridSpec, dim: usize) -> Result<Self> {
        let n = grid.n_horizon() * dim;
        Control::new(grid, dim, vec![0.0; n], None)
    }

    pub fn constant(grid: GridSpec, dim: usize, value: &[f64]) -> Result<Self> {
        if value.len() != dim {
            return Err(Error::Shape(format!(
                "constant control value has length {}, dim is {dim}",
                value.len()
            )));
        }
        let mut values = Vec::with_capacity(grid.n_horizon() * dim);
        for _ in 0..grid.n_horizon() {
            values.extend_from_slice(value);
        }
        Control::new(grid, dim, values, None)
    }

    /// `f(t_k, out)` fills the value used on [t_k, t_{k+1}).
    pub fn from_fn(
        grid: GridSpec,
        dim: usize,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self> {
        let mut values = vec![0.0; grid.n_horizon() * dim];
        for k in 0..grid.n_horizon() {
            f(k as f64 * grid.step(), &mut values[k * dim..(k + 1) * dim]);
        }
        Control::new(grid, dim, values, None)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_horizon()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    /// Σ |u_k|² h.
    pub fn l2_norm_squared(&self) -> f64 {
        let h = self.grid.step();
        self.values.iter().map(|v| v * v).sum::<f64>() * h
    }
}

/// Ball domain around an equilibrium or a periodic orbit, in segment
/// sup-distance.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    center: Orbit,
    radius: f64,
}

impl DomainSpec {
    pub fn equilibrium_ball(center: Orbit, radius: f64) -> Result<Self> {
        if !center.is_equilibrium() {
            return Err(Error::Argument(
                "equilibrium_ball requires an equilibrium orbit center".into(),
            ));
        }
        DomainSpec::ball(center, radius)
    }

    pub fn orbit_ball(center: Orbit, radius: f64) -> Result<Self> {
        if center.is_equilibrium() {
            return Err(Error::Argument(
                "orbit_ball requires a genuinely periodic center; use equilibrium_ball".into(),
            ));
        }
        DomainSpec::ball(center, radius)
    }

    /// Ball of either kind.
    pub fn ball(center: Orbit, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Argument(format!("domain radius must be positive, got {radius}")));
        }
        Ok(DomainSpec { center, radius })
    }

    pub fn center(&self) -> &Orbit {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Membership test d₀(orbit, seg) < radius with early abort; does not
    /// compute the exact distance.
    pub fn contains(&self, seg: &SegmentView<'_>) -> Result<bool> {
        let r2 = self.radius * self.radius;
        for j in 0..self.center.segment_count() {
            let cand = self.center.segment(j);
            if cand.n_nodes() != seg.n_nodes() || cand.dim() != seg.dim() {
                return Err(Error::Shape(
                    "segment shape does not match domain orbit segments".into(),
                ));
            }
            let mut sup2 = 0.0f64;
            // newest nodes first: mismatched orbit phases abort quickly
            for i in (0..seg.n_nodes()).rev() {
                let d2: f64 = seg
                    .node(i)
                    .iter()
                    .zip(cand.node(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 > sup2 {
                    sup2 = d2;
                    if sup2 >= r2 {
                        break;
                    }
                }
            }
            if sup2 < r2 {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Outcome of one exit experiment.
#[derive(Clone, Debug)]
pub struct ExitRecord {
    pub epsilon: f64,
    /// First grid time with the segment outside the domain; `None` when the
    /// trajectory was censored at `t_max`.
    pub exit_time: Option<f64>,
    /// Segment at exit, or at `t_max` when censored.
    pub exit_segment: HistorySegment,
    pub steps_used: usize,
    /// Girsanov log-likelihood ratio accumulated along the path; 0 for
    /// plain simulation.
    pub log_weight: f64,
}

impl ExitRecord {
    pub fn censored(&self) -> bool {
        self.exit_time.is_none()
    }
}

fn check_model_grid(model: &CoefficientModel, phi: &HistorySegment, grid: &GridSpec) -> Result<()> {
    if model.dim_state() != phi.dim() {
        return Err(Error::Shape(format!(
            "model state dimension {} vs history dimension {}",
            model.dim_state(),
            phi.dim()
        )));
    }
    if !phi.grid().compatible(grid) {
        return Err(Error::Grid(
            "history grid (tau, step) does not match the integration grid".into(),
        ));
    }
    model.check_grid(grid)
}

/// Shared explicit-Euler loop. `epsilon = 0` with `weight = false` is the
/// deterministic skeleton; a control adds σ(X)u·h to the drift; with noise,
/// the increment is √(εh)·σ(X)ξ and the Girsanov log-weight accumulates
/// -(1/√ε)Σ v_k'ξ_k √h - (1/(2ε))Σ|v_k|² h.
fn euler_loop(
    model: &CoefficientModel,
    phi: &HistorySegment,
    grid: &GridSpec,
    epsilon: f64,
    control: Option<&Control>,
    mut rng: Option<&mut ChaCha12Rng>,
    accumulate_weight: bool,
) -> Result<(PathGrid, f64)> {
    check_model_grid(model, phi, grid)?;
    if let Some(c) = control {
        if c.dim() != model.dim_noise() {
            return Err(Error::Shape(format!(
                "control dimension {} vs model noise dimension {}",
                c.dim(),
                model.dim_noise()
            )));
        }
        if !c.grid().compatible(grid) || c.n_steps() < grid.n_horizon() {
            return Err(Error::Grid(
                "control grid must match the integration grid and cover its horizon".into(),
            ));
        }
    }
    let d = model.dim_state();
    let m = model.dim_noise();
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let noise_scale = (epsilon * h).sqrt();

    let mut path = PathGrid::from_history(phi, grid.horizon())?;
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * m];
    let mut xi = vec![0.0; m];
    let mut log_weight = 0.0;

    for k in 0..grid.n_horizon() {
        {
            let seg = path.segment_view(k);
            model.drift_into(&seg, &mut drift);
            model.diffusion_into(&seg, &mut sigma);
        }
        if let Some(r) = rng.as_deref_mut() {
            for x in xi.iter_mut() {
                *x = r.sample(StandardNormal);
            }
        }
        let t_next = (k + 1) as f64 * h;
        let v = control.map(|c| c.value(k));
        if accumulate_weight {
            let v = v.expect("weight accumulation requires a control");
            let vv: f64 = v.iter().map(|u| u * u).sum();
            let vxi: f64 = v.iter().zip(&xi).map(|(u, z)| u * z).sum();
            log_weight += -vxi * sqrt_h / epsilon.sqrt() - 0.5 * vv * h / epsilon;
        }
        let (prev, next) = path.split_at_step(k);
        let mut norm2 = 0.0;
        for i in 0..d {
            let mut incr = h * drift[i];
            let row = &sigma[i * m..(i + 1) * m];
            if let Some(v) = v {
                let sv: f64 = row.iter().zip(v).map(|(s, u)| s * u).sum();
                incr += h * sv;
            }
            if rng.is_some() {
                let sxi: f64 = row.iter().zip(&xi).map(|(s, z)| s * z).sum();
                incr += noise_scale * sxi;
            }
            next[i] = prev[i] + incr;
            norm2 += next[i] * next[i];
        }
        if !norm2.is_finite() || norm2 > BLOWUP_NORM * BLOWUP_NORM {
            return Err(Error::BlowUp { t: t_next, norm: norm2.sqrt() });
        }
    }
    Ok((path, log_weight))
}

/// Deterministic skeleton ẋ = b(x_t): explicit Euler from the history
/// segment over the grid horizon. Diffusion is ignored.
pub fn solve_dde(model: &CoefficientModel, phi: &HistorySegment, grid: &GridSpec) -> Result<PathGrid> {
    euler_loop(model, phi, grid, 0.0, None, None, false).map(|(p, _)| p)
}

/// Controlled skeleton ẋ = b(x_t) + σ(x_t)u(t).
pub fn solve_controlled(
    model: &CoefficientModel,
    phi: &HistorySegment,
    control: &Control,
    grid: &GridSpec,
) -> Result<PathGrid> {
    euler_loop(model, phi, grid, 0.0, Some(control), None, false).map(|(p, _)| p)
}

/// Euler-Maruyama path of dX = b(X_t)dt + √ε σ(X_t)dW. `epsilon = 0`
/// reproduces [`solve_dde`] bitwise. Reproducible given (inputs, seed).
pub fn simulate_sdde(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<PathGrid> {
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return solve_dde(model, phi, grid);
    }
    let mut rng = stream_rng(seed, 0);
    euler_loop(model, phi, grid, epsilon, None, Some(&mut rng), false).map(|(p, _)| p)
}

/// Tilted simulation dX = [b(X_t) + σ(X_t)v(t)]dt + √ε σ(X_t)dW together
/// with the Girsanov log-weight: for any path payoff F,
/// E_plain[F] = E_tilted[F · exp(log_weight)].
pub fn simulate_controlled_sdde(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    control: &Control,
    grid: &GridSpec,
    seed: u64,
) -> Result<(PathGrid, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut rng = stream_rng(seed, 0);
    euler_loop(model, phi, grid, epsilon, Some(control), Some(&mut rng), true)
}

/// Sliding history window for open-ended integration; keeps the last
/// N_τ + 1 nodes contiguous so segment views need no copying.
struct RollingWindow {
    dim: usize,
    n_tau: usize,
    step: f64,
    buf: Vec<f64>,
    cap_nodes: usize,
    /// node offset of the window start inside `buf`
    start: usize,
}

impl RollingWindow {
    fn new(phi: &HistorySegment) -> Self {
        let dim = phi.dim();
        let n_tau = phi.grid().n_tau();
        let window = n_tau + 1;
        let cap_nodes = 4 * window;
        let mut buf = vec![0.0; cap_nodes * dim];
        buf[..window * dim].copy_from_slice(phi.data());
        RollingWindow { dim, n_tau, step: phi.grid().step(), buf, cap_nodes, start: 0 }
    }

    fn view(&self) -> SegmentView<'_> {
        let window = self.n_tau + 1;
        SegmentView::new(
            &self.buf[self.start * self.dim..(self.start + window) * self.dim],
            self.dim,
            self.step,
        )
    }

    /// Append the next sample, advancing the window by one node.
    fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.dim);
        let window = self.n_tau + 1;
        if self.start + window == self.cap_nodes {
            // slide the live window back to the front
            self.buf.copy_within(self.start * self.dim..(self.start + window) * self.dim, 0);
            self.start = 0;
        }
        let at = (self.start + window) * self.dim;
        self.buf[at..at + self.dim].copy_from_slice(sample);
        self.start += 1;
    }
}

/// Run one (possibly tilted) trajectory until its segment leaves the domain
/// or `t_max` passes. Membership is checked after every step; for
/// equilibrium-ball domains only the new sample needs testing, since the
/// rest of the window was inside by induction.
///
/// A control (used for importance sampling) acts on [0, control horizon];
/// past its horizon the tilt is zero. The returned `log_weight` converts
/// tilted-law payoffs to plain-law expectations.
#[allow(clippy::too_many_arguments)]
pub fn first_exit(
    model: &CoefficientModel,
    phi: &HistorySegment,
    epsilon: f64,
    domain: &DomainSpec,
    t_max: f64,
    grid: &GridSpec,
    seed: u64,
    control: Option<&Control>,
) -> Result<ExitRecord> {
    check_model_grid(model, phi, grid)?;
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if !(t_max > 0.0) {
        return Err(Error::Argument(format!("t_max must be positive, got {t_max}")));
    }
    if let Some(c) = control {
        if c.dim() != model.dim_noise() || !c.grid().compatible(grid) {
            return Err(Error::Shape("control incompatible with model or grid".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Argument("tilted exit sampling requires epsilon > 0".into()));
        }
    }
    if !domain.contains(&phi.view())? {
        return Err(Error::Argument(
            "initial history must lie strictly inside the exit domain".into(),
        ));
    }

    let d = model.dim_state();
    let m = model.dim_noise();
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let noise_scale = (epsilon * h).sqrt();
    let max_steps = ((t_max / h).round() as usize).max(1);

    let equilibrium_center: Option<Vec<f64>> =
        domain.center().equilibrium_value().map(|v| v.to_vec());
    let r2 = domain.radius() * domain.radius();

    let mut window = RollingWindow::new(phi);
    let mut rng = (epsilon > 0.0).then(|| stream_rng(seed, 0));
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * m];
    let mut xi = vec![0.0; m];
    let mut next = vec![0.0; d];
    let mut log_weight = 0.0;

    for k in 0..max_steps {
        {
            let seg = window.view();
            model.drift_into(&seg, &mut drift);
            model.diffusion_into(&seg, &mut sigma);
        }
        if let Some(r) = rng.as_mut() {
            for x in xi.iter_mut() {
                *x = r.sample(StandardNormal);
            }
        }
        let v = control.and_then(|c| (k < c.n_steps()).then(|| c.value(k)));
        if let Some(v) = v {
            let vv: f64 = v.iter().map(|u| u * u).sum();
            let vxi: f64 = v.iter().zip(&xi).map(|(u, z)| u * z).sum();
            log_weight += -vxi * sqrt_h / epsilon.sqrt() - 0.5 * vv * h / epsilon;
        }
        let t_next = (k + 1) as f64 * h;
        let mut norm2 = 0.0;
        {
            let seg = window.view();
            let prev = seg.current();
            for i in 0..d {
                let mut incr = h * drift[i];
                let row = &sigma[i * m..(i + 1) * m];
                if let Some(v) = v {
                    let sv: f64 = row.iter().zip(v).map(|(s, u)| s * u).sum();
                    incr += h * sv;
                }
                if rng.is_some() {
                    let sxi: f64 = row.iter().zip(&xi).map(|(s, z)| s * z).sum();
                    incr += noise_scale * sxi;
                }
                next[i] = prev[i] + incr;
                norm2 += next[i] * next[i];
            }
        }
        if !norm2.is_finite() || norm2 > BLOWUP_NORM * BLOWUP_NORM {
            return Err(Error::BlowUp { t: t_next, norm: norm2.sqrt() });
        }
        window.push(&next);

        let exited = if let Some(center) = &equilibrium_center {
            let d2: f64 = next.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= r2
        } else {
            !domain.contains(&window.view())?
        };
        if exited {
            return Ok(ExitRecord {
                epsilon,
                exit_time: Some(t_next),
                exit_segment: window.view().to_history(),
                steps_used: k + 1,
                log_weight,
            });
        }
    }
    Ok(ExitRecord {
        epsilon,
        exit_time: None,
        exit_segment: window.view().to_history(),
        steps_used: max_steps,
        log_weight,
    })
}

/// Settings for scalar periodic-orbit detection.
#[derive(Clone, Copy, Debug)]
pub struct OrbitDetectSettings {
    pub step: f64,
    /// Time discarded before crossing analysis begins.
    pub transient: f64,
    /// Total integration budget.
    pub max_time: f64,
    /// Poincaré level whose up-crossings define cycle starts (usually the
    /// equilibrium value).
    pub level: f64,
    /// Gap-agreement and closure tolerance.
    pub tolerance: f64,
    /// Oscillation amplitudes below this declare convergence to equilibrium.
    pub equilibrium_tolerance: f64,
}

impl Default for OrbitDetectSettings {
    fn default() -> Self {
        OrbitDetectSettings {
            step: 1.0 / 1024.0,
            transient: 50.0,
            max_time: 200.0,
            level: 0.0,
            tolerance: 1e-3,
            equilibrium_tolerance: 1e-7,
        }
    }
}

/// Detected orbit plus detection diagnostics.
#[derive(Clone, Debug)]
pub struct OrbitDetection {
    pub orbit: Orbit,
    /// Both half-period gaps (level up-crossing → down-crossing → next
    /// up-crossing) exceed τ. Always false for equilibria.
    pub slowly_oscillating: bool,
    /// Sup-distance between the anchor segment and the segment one period
    /// later. 0 for equilibria.
    pub closure_error: f64,
    /// Interpolated period estimate before grid rounding (0 for equilibria).
    pub period_estimate: f64,
    pub crossings_used: usize,
}

fn interp_crossing(t0: f64, h: f64, x0: f64, x1: f64, level: f64) -> f64 {
    t0 + h * (level - x0) / (x1 - x0)
}

/// Detect the long-time attractor of the scalar deterministic flow started
/// from `phi`: either an equilibrium (oscillation dies below tolerance) or a
/// periodic orbit found from up-crossings of `settings.level` whose
/// consecutive gaps agree within tolerance. The orbit is re-sampled over one
/// rounded period and closure-checked.
pub fn detect_periodic_orbit(
    model: &CoefficientModel,
    phi: &HistorySegment,
    settings: &OrbitDetectSettings,
) -> Result<OrbitDetection> {
    if model.dim_state() != 1 {
        return Err(Error::Argument(
            "periodic-orbit detection is scalar only (dim_state = 1)".into(),
        ));
    }
    if !(settings.max_time > settings.transient && settings.transient >= 0.0) {
        return Err(Error::Argument("need max_time > transient >= 0".into()));
    }
    let tau = phi.grid().tau();
    let grid = GridSpec::new(tau, settings.step, settings.max_time)?;
    check_model_grid(model, phi, &grid)?;
    let path = solve_dde(model, phi, &grid)?;
    let h = grid.step();
    let n_tau = grid.n_tau();
    let x = path.data();
    let n_nodes = grid.n_nodes();
    let level = settings.level;

    // node index of the first time >= transient
    let first = grid.grid_index(settings.transient)?;

    let mut ups: Vec<f64> = Vec::new();
    let mut downs: Vec<f64> = Vec::new();
    let mut amp_since_up = 0.0f64;
    let mut last_interval_amp = f64::INFINITY;
    for k in first..n_nodes - 1 {
        let (x0, x1) = (x[k], x[k + 1]);
        let t0 = grid.node_time(k);
        if x0 < level && x1 >= level {
            if !ups.is_empty() {
                last_interval_amp = amp_since_up;
            }
            ups.push(interp_crossing(t0, h, x0, x1, level));
            amp_since_up = 0.0;
        } else if x0 >= level && x1 < level {
            downs.push(interp_crossing(t0, h, x0, x1, level));
        }
        amp_since_up = amp_since_up.max((x1 - level).abs());
    }

    // equilibrium: the tail stays flat
    let tail_from = n_nodes.saturating_sub(2 * n_tau + 1);
    let x_end = x[n_nodes - 1];
    let tail_amp = x[tail_from..].iter().map(|v| (v - x_end).abs()).fold(0.0f64, f64::max);
    let oscillation_died = ups.len() >= 2 && last_interval_amp < settings.equilibrium_tolerance;
    if tail_amp < settings.equilibrium_tolerance || oscillation_died {
        let value = [x_end];
        return Ok(OrbitDetection {
            orbit: Orbit::equilibrium(tau, h, &value)?,
            slowly_oscillating: false,
            closure_error: 0.0,
            period_estimate: 0.0,
            crossings_used: ups.len(),
        });
    }

    if ups.len() < 3 {
        return Err(Error::Detection(format!(
            "only {} level up-crossings after the transient; no periodicity found within t = {}",
            ups.len(),
            settings.max_time
        )));
    }
    let gaps: Vec<f64> = ups.windows(2).map(|w| w[1] - w[0]).collect();
    let (g_last, g_prev) = (gaps[gaps.len() - 1], gaps[gaps.len() - 2]);
    if (g_last - g_prev).abs() > settings.tolerance {
        return Err(Error::Detection(format!(
            "period gaps did not stabilize: last two are {g_prev} and {g_last}"
        )));
    }
    let period_estimate = g_last;
    let period_nodes = (period_estimate / h).round() as usize;
    if period_nodes == 0 {
        return Err(Error::Detection("estimated period below one grid step".into()));
    }

    // anchor at the second-to-last up-crossing so a full period of samples
    // (plus slack) exists beyond it
    let mut anchor_idx = ups.len() - 2;
    let mut na = (ups[anchor_idx] / h).round() as usize + n_tau;
    while na + period_nodes + 1 >= n_nodes || na < n_tau {
        if anchor_idx == 0 {
            return Err(Error::Detection(
                "not enough simulated data around the final crossings".into(),
            ));
        }
        anchor_idx -= 1;
        na = (ups[anchor_idx] / h).round() as usize + n_tau;
    }
    let seg_a = path.segment_view(na - n_tau);
    let seg_b = path.segment_view(na - n_tau + period_nodes);
    let closure_error = sup_distance_views(&seg_a, &seg_b);
    if closure_error > settings.tolerance {
        return Err(Error::Detection(format!(
            "orbit fails to close: sup distance over one period is {closure_error}"
        )));
    }

    let cycle_grid = GridSpec::new(tau, h, period_nodes as f64 * h)?;
    let cycle_data = path.data()[na - n_tau..=na + period_nodes].to_vec();
    let cycle_path = PathGrid::new(cycle_grid, 1, cycle_data)?;
    let orbit = Orbit::from_cycle(cycle_path, period_nodes)?;

    // slow oscillation: the down-crossing inside the final cycle splits it
    // into two gaps, both longer than the delay
    let t_anchor = ups[anchor_idx];
    let t_next_up = ups[anchor_idx + 1];
    let slowly_oscillating = downs
        .iter()
        .find(|&&t| t > t_anchor && t < t_next_up)
        .map(|&t_down| t_down - t_anchor > tau && t_next_up - t_down > tau)
        .unwrap_or(false);

    Ok(OrbitDetection {
        orbit,
        slowly_oscillating,
        closure_error,
        period_estimate,
        crossings_used: ups.len(),
    })
}

/// Report from [`check_uniform_attraction`].
#[derive(Clone, Debug)]
pub struct AttractionReport {
    pub success: bool,
    /// Smallest sampled grid time T with d₀(orbit, x_t) ≤ delta for every
    /// probe and every sampled t ≥ T; `None` on failure.
    pub t_delta: Option<f64>,
    /// Max over probes of the distance at the final horizon time.
    pub max_final_distance: f64,
    /// Max over probes and sampled times ≥ t_delta (success only).
    pub max_distance_after: f64,
    pub probe_count: usize,
    /// Node stride at which distances were sampled.
    pub stride: usize,
}

/// Integrate the deterministic flow from random probe segments inside
/// `domain` and measure convergence toward `orbit`: finds the smallest
/// sampled time T_δ after which every probe stays within `delta`.
///
/// Probes are random piecewise-linear perturbations (sup norm < 0.9·radius)
/// of stored center segments. Distances are sampled every `stride` nodes
/// with stride = ceil(n_horizon/2048), so T_δ is resolved to stride·h.
#[allow(clippy::too_many_arguments)]
pub fn check_uniform_attraction(
    model: &CoefficientModel,
    domain: &DomainSpec,
    orbit: &Orbit,
    delta: f64,
    horizon: f64,
    probe_count: usize,
    seed: u64,
) -> Result<AttractionReport> {
    if probe_count == 0 {
        return Err(Error::Argument("probe_count must be >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    let center = domain.center();
    let grid = center.grid().with_horizon(horizon)?;
    let d = center.dim();
    let n_tau = grid.n_tau();
    let h = grid.step();
    let stride = grid.n_horizon().div_ceil(2048).max(1);

    let mut per_probe: Vec<Vec<f64>> = Vec::with_capacity(probe_count);
    let mut max_final = 0.0f64;
    for p in 0..probe_count {
        let mut rng = stream_rng(seed, p as u64);
        let base = center.segment(p % center.segment_count());
        // piecewise-linear bump: 5 knots per component, sup norm <= 0.9 r
        let knots = 5usize;
        let mut knot_vals = vec![0.0; knots * d];
        for v in knot_vals.iter_mut() {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * 0.9 * domain.radius();
        }
        let mut data = base.raw().to_vec();
        for i in 0..=n_tau {
            let pos = i as f64 / n_tau as f64 * (knots - 1) as f64;
            let (k0, frac) = (pos.floor() as usize, pos.fract());
            let k1 = (k0 + 1).min(knots - 1);
            for c in 0..d {
                let bump = knot_vals[k0 * d + c] * (1.0 - frac) + knot_vals[k1 * d + c] * frac;
                data[i * d + c] += bump;
            }
        }
        let phi = HistorySegment::new(*center.grid(), d, data)?;
        let path = solve_dde(model, &phi, &grid)?;
        let mut dists = Vec::with_capacity(grid.n_horizon() / stride + 1);
        let mut k = 0;
        loop {
            let k_eff = k.min(grid.n_horizon());
            let seg = path.segment_view(k_eff);
            dists.push(orbit.distance_to(&seg)?);
            if k_eff == grid.n_horizon() {
                break;
            }
            k += stride;
        }
        max_final = max_final.max(*dists.last().unwrap());
        per_probe.push(dists);
    }

    // last sampled index where any probe exceeds delta
    let samples = per_probe[0].len();
    let mut last_bad: Option<usize> = None;
    for s in 0..samples {
        if per_probe.iter().any(|dp| dp[s] > delta) {
            last_bad = Some(s);
        }
    }
    let (success, t_delta, max_after) = match last_bad {
        Some(s) if s + 1 >= samples => (false, None, f64::NAN),
        bad => {
            let first_good = bad.map_or(0, |s| s + 1);
            let max_after = per_probe
                .iter()
                .flat_map(|dp| dp[first_good..].iter().copied())
                .fold(0.0f64, f64::max);
            (true, Some((first_good * stride).min(grid.n_horizon()) as f64 * h), max_after)
        }
    };
    Ok(AttractionReport {
        success,
        t_delta,
        max_final_distance: max_final,
        max_distance_after: max_after,
        probe_count,
        stride,
    })
}
