//! Quasipotential computation by path-space minimization.
//!
//! V(ψ) = inf over horizons T and paths from the orbit to ψ of the
//! discretized action. The inner problem is solved by limited-memory
//! quasi-Newton descent over free node values (initial segment pinned to an
//! orbit segment, terminal condition pinned or sphere-constrained); the
//! horizon is handled by an outer grid of candidate T values, since the
//! action is not differentiable in T through the pinned-window structure.
//!
//! Exit thresholds for a ball of radius δ: the outer estimate V̄ minimizes
//! to terminal spheres of radius δ+η and the inner estimate V_lower to
//! radius δ-η, each extrapolated to η → 0.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::action::{action_with_gradient, path_action};
use crate::error::{Error, Result};
use crate::integrate::DomainSpec;
use crate::models::CoefficientModel;
use crate::rng::stream_rng;
use crate::segments::{sup_distance, GridSpec, HistorySegment, Orbit, PathGrid};

/// Knobs of the inner minimizer and the outer horizon search.
#[derive(Clone, Debug)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Sup-norm of the packed gradient that counts as converged.
    pub gradient_tolerance: f64,
    /// Quasi-Newton history length.
    pub memory: usize,
    /// Backtracking shrink factor in (0, 1).
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    /// Candidate horizons; empty means τ·{1, 2, 4, 8, 16, 32}.
    pub horizon_grid: Vec<f64>,
    /// Perturbed re-initializations per subproblem (beyond the plain one).
    pub restarts: usize,
    /// Seed for restart perturbations.
    pub seed: u64,
    /// Cap on starting orbit phases tried for periodic orbits (evenly
    /// subsampled); equilibria always use their single segment.
    pub max_start_phases: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 3000,
            gradient_tolerance: 1e-7,
            memory: 12,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            horizon_grid: Vec::new(),
            restarts: 2,
            seed: 0,
            max_start_phases: 16,
        }
    }
}

impl OptimizerSettings {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.memory == 0 {
            return Err(Error::Argument("max_iterations and memory must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Argument(format!("shrink must be in (0,1), got {}", self.shrink)));
        }
        if !(self.gradient_tolerance > 0.0 && self.sufficient_decrease > 0.0) {
            return Err(Error::Argument(
                "gradient_tolerance and sufficient_decrease must be positive".into(),
            ));
        }
        if self.max_start_phases == 0 {
            return Err(Error::Argument("max_start_phases must be positive".into()));
        }
        Ok(())
    }

    /// The horizon grid, defaulted to τ·2^k, k = 0..5.
    pub fn horizons(&self, tau: f64) -> Vec<f64> {
        if self.horizon_grid.is_empty() {
            (0..6).map(|k| tau * (1u32 << k) as f64).collect()
        } else {
            self.horizon_grid.clone()
        }
    }
}

/// Terminal constraint of the inner minimization.
#[derive(Clone, Debug)]
pub enum TerminalCondition {
    /// Last N_τ+1 nodes pinned to this segment.
    Segment(HistorySegment),
    /// Terminal point on the sphere of this radius around the domain
    /// anchor; the rest of the terminal window stays free. Scalar models
    /// try both endpoint candidates; d ≥ 2 parametrizes the sphere by
    /// angles (equilibrium centers only).
    BoundaryHit { radius: f64 },
}

/// Convergence bookkeeping for the winning subproblem.
#[derive(Clone, Debug)]
pub struct MinimizeDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Best value per restart of the winning subproblem.
    pub restart_values: Vec<f64>,
    pub converged: bool,
    pub subproblems: usize,
    /// Set when a heuristic terminal condition was used (boundary hit
    /// anchored to a periodic orbit's value range).
    pub heuristic_terminal: bool,
}

/// Result of one minimization (fixed horizon).
#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub path: PathGrid,
    pub value: f64,
    pub diagnostics: MinimizeDiagnostics,
}

/// Quasipotential estimate with its horizon profile.
#[derive(Clone, Debug)]
pub struct QuasipotentialResult {
    pub value: f64,
    pub path: PathGrid,
    pub horizon: f64,
    /// (T, best value) per candidate horizon; `None` marks an infeasible or
    /// non-converged horizon.
    pub per_horizon: Vec<(f64, Option<f64>)>,
    pub diagnostics: MinimizeDiagnostics,
}

/// Orbit value k steps of h past phase j (cycling).
fn orbit_value(orbit: &Orbit, phase: usize, k: usize) -> &[f64] {
    let n_tau = orbit.grid().n_tau();
    if orbit.is_equilibrium() {
        return orbit.path().node(n_tau);
    }
    let p = orbit.segment_count();
    orbit.path().node(n_tau + (phase + k) % p)
}

/// The explicit low-action connector used as an optimizer initializer:
/// follow the orbit's motion from its segment nearest φ while bleeding off
/// the endpoint discrepancy linearly over one time unit,
/// x(t) = o(t) + max(0, 1-t)·(φ(0) - o(0)).
pub fn connect_to_orbit_path(orbit: &Orbit, phi: &HistorySegment, grid: &GridSpec) -> Result<PathGrid> {
    if !orbit.grid().compatible(grid) {
        return Err(Error::Grid("orbit grid incompatible with target grid".into()));
    }
    let d = orbit.dim();
    if phi.dim() != d {
        return Err(Error::Shape("history dimension differs from orbit dimension".into()));
    }
    // nearest stored phase
    let mut phase = 0;
    let mut best = f64::INFINITY;
    for j in 0..orbit.segment_count() {
        let dist = crate::segments::sup_distance_views(&orbit.segment(j), &phi.view());
        if dist < best {
            best = dist;
            phase = j;
        }
    }
    let h = grid.step();
    let o0 = orbit_value(orbit, phase, 0).to_vec();
    let disc: Vec<f64> = phi.view().current().iter().zip(&o0).map(|(p, o)| p - o).collect();
    let mut path = PathGrid::from_history(phi, grid.horizon())?;
    let n_tau = grid.n_tau();
    for k in 1..=grid.n_horizon() {
        let t = k as f64 * h;
        let fade = (1.0 - t).max(0.0);
        let o = orbit_value(orbit, phase, k);
        let node = path.node_mut(n_tau + k);
        for c in 0..d {
            node[c] = o[c] + fade * disc[c];
        }
    }
    Ok(path)
}

/// Shape of one subproblem's packed variable vector.
struct ProblemShape {
    free_nodes: Vec<usize>,
    /// Sphere-angle block length (d-1 for angle-parametrized terminals).
    angles: usize,
    /// Sphere center and radius when angles > 0.
    center: Vec<f64>,
    radius: f64,
}

impl ProblemShape {
    fn dof(&self, d: usize) -> usize {
        self.free_nodes.len() * d + self.angles
    }

    fn mask(&self, n_nodes: usize) -> Vec<bool> {
        let mut mask = vec![false; n_nodes];
        for &n in &self.free_nodes {
            mask[n] = true;
        }
        mask
    }
}

/// Unit vector n(θ) in hyperspherical coordinates and its Jacobian rows
/// dn[i] = ∂n/∂θ_i.
fn sphere_point(theta: &[f64], n: &mut [f64], dn: Option<&mut Vec<Vec<f64>>>) {
    let d = n.len();
    debug_assert_eq!(theta.len(), d - 1);
    for k in 0..d {
        let mut v = 1.0;
        for t in theta.iter().take(k.min(d - 1)) {
            v *= t.sin();
        }
        if k < d - 1 {
            v *= theta[k].cos();
        }
        n[k] = v;
    }
    if let Some(dn) = dn {
        for (i, row) in dn.iter_mut().enumerate().take(d - 1) {
            for (k, slot) in row.iter_mut().enumerate() {
                let mut v = 1.0;
                if k < i {
                    v = 0.0;
                } else {
                    for (j, t) in theta.iter().enumerate().take(k.min(d - 1)) {
                        v *= if j == i { t.cos() } else { t.sin() };
                    }
                    if k < d - 1 {
                        v *= if k == i { -theta[k].sin() } else { theta[k].cos() };
                    }
                }
                *slot = v;
            }
        }
    }
}

/// Angles of the unit vector v (inverse of [`sphere_point`]).
fn sphere_angles(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut theta = vec![0.0; d - 1];
    for i in 0..d - 1 {
        let tail: f64 = v[i..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if i == d - 2 {
            theta[i] = v[d - 1].atan2(v[d - 2]);
        } else if tail > 0.0 {
            theta[i] = (v[i] / tail).clamp(-1.0, 1.0).acos();
        }
    }
    theta
}

/// Pack the current path (and angle block) into z.
fn pack(path: &PathGrid, shape: &ProblemShape, theta: &[f64], z: &mut [f64]) {
    let d = path.dim();
    for (slot, &node) in shape.free_nodes.iter().enumerate() {
        z[slot * d..(slot + 1) * d].copy_from_slice(path.node(node));
    }
    z[shape.free_nodes.len() * d..].copy_from_slice(theta);
}

/// Write z into the path's free nodes and, when angle-parametrized, the
/// terminal node.
fn unpack(z: &[f64], shape: &ProblemShape, path: &mut PathGrid, n_work: &mut [f64]) {
    let d = path.dim();
    for (slot, &node) in shape.free_nodes.iter().enumerate() {
        path.node_mut(node).copy_from_slice(&z[slot * d..(slot + 1) * d]);
    }
    if shape.angles > 0 {
        let theta = &z[shape.free_nodes.len() * d..];
        sphere_point(theta, n_work, None);
        let last = path.n_nodes() - 1;
        let node = path.node_mut(last);
        for c in 0..d {
            node[c] = shape.center[c] + shape.radius * n_work[c];
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct LbfgsRun {
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Two-loop L-BFGS with Armijo backtracking over a packed objective.
/// `obj(z, grad) -> value`; history restarts on stalled line searches.
fn lbfgs<F>(z: &mut [f64], mut obj: F, settings: &OptimizerSettings) -> Result<LbfgsRun>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = z.len();
    let m = settings.memory;
    let mut g = vec![0.0; n];
    let mut f = obj(z, &mut g)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut p = vec![0.0; n];
    let mut z_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;

    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let gnorm = sup_norm(&g);
        if gnorm <= settings.gradient_tolerance {
            return Ok(LbfgsRun { value: f, grad_norm: gnorm, iterations: iter, converged: true });
        }
        // two-loop recursion for p = -H g
        p.copy_from_slice(&g);
        let mut alpha_hist = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let a = rho[i] * dot(&s_hist[i], &p);
            alpha_hist[i] = a;
            axpy(-a, &y_hist[i], &mut p);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for v in p.iter_mut() {
                *v *= gamma;
            }
        }
        for i in 0..s_hist.len() {
            let b = rho[i] * dot(&y_hist[i], &p);
            axpy(alpha_hist[i] - b, &s_hist[i], &mut p);
        }
        for v in p.iter_mut() {
            *v = -*v;
        }
        let mut slope = dot(&g, &p);
        if slope >= 0.0 {
            // not a descent direction: drop the history, go steepest
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi = -gi;
            }
            slope = -dot(&g, &g);
        }

        // Armijo backtracking
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-18 {
            for ((zn, zi), pi) in z_new.iter_mut().zip(z.iter()).zip(&p) {
                *zn = zi + alpha * pi;
            }
            match obj(&z_new, &mut g_new) {
                Ok(f_new)
                    if f_new.is_finite()
                        && f_new <= f + settings.sufficient_decrease * alpha * slope =>
                {
                    // curvature history update
                    let s: Vec<f64> = z_new.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * norm2(&s).sqrt() * norm2(&y).sqrt() {
                        if s_hist.len() == m {
                            s_hist.remove(0);
                            y_hist.remove(0);
                            rho.remove(0);
                        }
                        rho.push(1.0 / sy);
                        s_hist.push(s);
                        y_hist.push(y);
                    }
                    z.copy_from_slice(&z_new);
                    g.copy_from_slice(&g_new);
                    f = f_new;
                    accepted = true;
                    break;
                }
                Ok(_) => alpha *= settings.shrink,
                // a blow-up inside the line search just means the step was
                // too long
                Err(Error::BlowUp { .. }) => alpha *= settings.shrink,
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            if !s_hist.is_empty() {
                s_hist.clear();
                y_hist.clear();
                rho.clear();
                continue;
            }
            break; // steepest descent also stalled: machine-precision floor
        }
    }
    let gnorm = sup_norm(&g);
    Ok(LbfgsRun {
        value: f,
        grad_norm: gnorm,
        iterations,
        converged: gnorm <= settings.gradient_tolerance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct Subproblem {
    init: PathGrid,
    shape: ProblemShape,
    theta0: Vec<f64>,
    /// perturbation amplitude for restarts
    scale: f64,
    heuristic: bool,
}

struct SubResult {
    path: PathGrid,
    value: f64,
    run: LbfgsRun,
    restart_values: Vec<f64>,
}

fn run_subproblem(
    model: &CoefficientModel,
    sub: &Subproblem,
    settings: &OptimizerSettings,
    sub_index: u64,
) -> Result<SubResult> {
    let d = sub.init.dim();
    let dof = sub.shape.dof(d);
    let mut mask = sub.shape.mask(sub.init.n_nodes());
    if sub.shape.angles > 0 {
        // the sphere chain rule reads the raw terminal-node gradient
        let last = sub.init.n_nodes() - 1;
        mask[last] = true;
    }

    if dof == 0 {
        // fully pinned: direct evaluation
        let value = path_action(model, &sub.init)?.value;
        return Ok(SubResult {
            path: sub.init.clone(),
            value,
            run: LbfgsRun { value, grad_norm: 0.0, iterations: 0, converged: true },
            restart_values: vec![value],
        });
    }

    let mut z0 = vec![0.0; dof];
    pack(&sub.init, &sub.shape, &sub.theta0, &mut z0);

    let mut best: Option<SubResult> = None;
    let mut restart_values = Vec::with_capacity(settings.restarts + 1);
    for restart in 0..=settings.restarts {
        let mut z = z0.clone();
        if restart > 0 {
            let mut rng = stream_rng(settings.seed, (sub_index << 8) | restart as u64);
            let n_node_vars = sub.shape.free_nodes.len() * d;
            for v in z.iter_mut().take(n_node_vars) {
                let e: f64 = rng.sample(StandardNormal);
                *v += 0.1 * sub.scale * e;
            }
            for v in z.iter_mut().skip(n_node_vars) {
                let e: f64 = rng.sample(StandardNormal);
                *v += 0.3 * e;
            }
        }
        let mut path = sub.init.clone();
        let mut n_work = vec![0.0; d];
        let mut dn_work: Vec<Vec<f64>> = vec![vec![0.0; d]; sub.shape.angles];
        let run = lbfgs(
            &mut z,
            |zv, grad| {
                unpack(zv, &sub.shape, &mut path, &mut n_work);
                let (value, full) = action_with_gradient(model, &path, &mask)?;
                for (slot, &node) in sub.shape.free_nodes.iter().enumerate() {
                    grad[slot * d..(slot + 1) * d].copy_from_slice(&full[node * d..(node + 1) * d]);
                }
                if sub.shape.angles > 0 {
                    // terminal node gradient → angle gradient by chain rule
                    let last = path.n_nodes() - 1;
                    let theta = &zv[sub.shape.free_nodes.len() * d..];
                    sphere_point(theta, &mut n_work, Some(&mut dn_work));
                    let gnode = &full[last * d..(last + 1) * d];
                    for (i, gi) in
                        grad[sub.shape.free_nodes.len() * d..].iter_mut().enumerate()
                    {
                        *gi = sub.shape.radius
                            * dn_work[i].iter().zip(gnode).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Ok(value)
            },
            settings,
        )?;
        restart_values.push(run.value);
        unpack(&z, &sub.shape, &mut path, &mut vec![0.0; d]);
        let better = match &best {
            Some(b) => {
                (run.converged && !b.run.converged)
                    || (run.converged == b.run.converged && run.value < b.value)
            }
            None => true,
        };
        if better {
            best = Some(SubResult {
                path: path.clone(),
                value: run.value,
                run,
                restart_values: Vec::new(),
            });
        }
    }
    let mut out = best.expect("at least one restart ran");
    out.restart_values = restart_values;
    Ok(out)
}

/// Free node indices: everything strictly between the pinned history and
/// the pinned terminal block.
fn free_interior(grid: &GridSpec, pinned_tail_nodes: usize) -> Vec<usize> {
    let n_nodes = grid.n_nodes();
    let first = grid.n_tau() + 1;
    let last_exclusive = n_nodes - pinned_tail_nodes;
    (first..last_exclusive).collect()
}

/// Minimize the action from `start` (each admissible starting phase) to the
/// terminal condition over the fixed horizon `t`. Returns the best
/// converged subproblem; errors with the best value found when nothing
/// converges.
pub fn minimize_action(
    model: &CoefficientModel,
    start: &Orbit,
    terminal: &TerminalCondition,
    t: f64,
    grid: &GridSpec,
    settings: &OptimizerSettings,
) -> Result<MinimizeOutcome> {
    settings.validate()?;
    if model.dim_state() != model.dim_noise() {
        return Err(Error::Shape("action minimization needs square diffusion".into()));
    }
    if model.dim_state() != start.dim() {
        return Err(Error::Shape("model dimension differs from orbit dimension".into()));
    }
    if !start.grid().compatible(grid) {
        return Err(Error::Grid("orbit grid incompatible with optimization grid".into()));
    }
    let run_grid = grid.with_horizon(t)?;
    if run_grid.n_horizon() == 0 {
        return Err(Error::Argument("horizon must be positive".into()));
    }
    model.check_grid(&run_grid)?;
    let d = model.dim_state();

    // starting phases: equilibrium has one; periodic orbits subsampled
    let phases: Vec<usize> = if start.is_equilibrium() {
        vec![0]
    } else {
        let p = start.segment_count();
        let take = settings.max_start_phases.min(p);
        (0..take).map(|i| i * p / take).collect()
    };

    let mut subs: Vec<Subproblem> = Vec::new();
    let mut heuristic_any = false;
    match terminal {
        TerminalCondition::Segment(psi) => {
            if psi.dim() != d || !psi.grid().compatible(&run_grid) {
                return Err(Error::Shape("terminal segment incompatible with grid".into()));
            }
            let n_nodes = run_grid.n_nodes();
            let n_tau = run_grid.n_tau();
            let tail = n_tau + 1;
            for &phase in &phases {
                let phi = start.segment(phase).to_history();
                let mut init = build_segment_init(start, phase, &phi, psi, &run_grid)?;
                // write pinned terminal window; bail out if it collides with
                // the pinned history (short horizons)
                let mut consistent = true;
                for (j, node) in (n_nodes - tail..n_nodes).enumerate() {
                    let target = psi.view().node(j);
                    if node <= n_tau {
                        let have = init.node(node);
                        if have
                            .iter()
                            .zip(target)
                            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
                        {
                            consistent = false;
                            break;
                        }
                    } else {
                        init.node_mut(node).copy_from_slice(target);
                    }
                }
                if !consistent {
                    continue;
                }
                let scale = sup_distance(&phi, psi)?.max(1e-3);
                subs.push(Subproblem {
                    init,
                    shape: ProblemShape {
                        free_nodes: free_interior(&run_grid, tail),
                        angles: 0,
                        center: Vec::new(),
                        radius: 0.0,
                    },
                    theta0: Vec::new(),
                    scale,
                    heuristic: false,
                });
            }
            if subs.is_empty() {
                return Err(Error::Argument(
                    "terminal segment conflicts with the pinned history at this horizon".into(),
                ));
            }
        }
        TerminalCondition::BoundaryHit { radius } => {
            if !(*radius > 0.0) {
                return Err(Error::Argument(format!("radius must be positive, got {radius}")));
            }
            if d == 1 {
                let (lo, hi) = {
                    let (l, h) = start.value_range();
                    (l[0], h[0])
                };
                heuristic_any = !start.is_equilibrium();
                for &phase in &phases {
                    let phi = start.segment(phase).to_history();
                    for target in [lo - radius, hi + radius] {
                        let init =
                            build_boundary_init(start, phase, &phi, &[target], &run_grid)?;
                        subs.push(Subproblem {
                            init,
                            shape: ProblemShape {
                                free_nodes: free_interior(&run_grid, 1),
                                angles: 0,
                                center: Vec::new(),
                                radius: 0.0,
                            },
                            theta0: Vec::new(),
                            scale: *radius,
                            heuristic: !start.is_equilibrium(),
                        });
                    }
                }
            } else {
                let Some(center) = start.equilibrium_value().map(|v| v.to_vec()) else {
                    return Err(Error::Argument(
                        "angle-parametrized boundary hit requires an equilibrium center for d >= 2"
                            .into(),
                    ));
                };
                let phi = start.segment(0).to_history();
                // seed directions: each signed axis
                for axis in 0..d {
                    for sign in [1.0f64, -1.0] {
                        let mut dir = vec![0.0; d];
                        dir[axis] = sign;
                        let target: Vec<f64> =
                            center.iter().zip(&dir).map(|(c, n)| c + radius * n).collect();
                        let init = build_boundary_init(start, 0, &phi, &target, &run_grid)?;
                        subs.push(Subproblem {
                            init,
                            shape: ProblemShape {
                                free_nodes: free_interior(&run_grid, 1),
                                angles: d - 1,
                                center: center.clone(),
                                radius: *radius,
                            },
                            theta0: sphere_angles(&dir),
                            scale: *radius,
                            heuristic: false,
                        });
                    }
                }
            }
        }
    }

    let subproblems = subs.len();
    let mut best: Option<(SubResult, bool)> = None;
    for (i, sub) in subs.iter().enumerate() {
        let result = match run_subproblem(model, sub, settings, i as u64) {
            Ok(r) => r,
            Err(Error::BlowUp { .. }) => continue,
            Err(e) => return Err(e),
        };
        let replace = match &best {
            Some((b, _)) => {
                (result.run.converged && !b.run.converged)
                    || (result.run.converged == b.run.converged && result.value < b.value)
            }
            None => true,
        };
        if replace {
            best = Some((result, sub.heuristic));
        }
    }
    let Some((best, heuristic)) = best else {
        return Err(Error::Numerical("every subproblem failed to evaluate".into()));
    };
    if !best.run.converged {
        return Err(Error::Convergence { value: best.value, grad_norm: best.run.grad_norm });
    }
    Ok(MinimizeOutcome {
        path: best.path,
        value: best.value,
        diagnostics: MinimizeDiagnostics {
            iterations: best.run.iterations,
            grad_norm: best.run.grad_norm,
            restart_values: best.restart_values,
            converged: best.run.converged,
            subproblems,
            heuristic_terminal: heuristic_any || heuristic,
        },
    })
}

/// Initializer toward a pinned terminal segment: follow the orbit, then
/// blend linearly into ψ's oldest value over the last free time unit.
fn build_segment_init(
    orbit: &Orbit,
    phase: usize,
    phi: &HistorySegment,
    psi: &HistorySegment,
    grid: &GridSpec,
) -> Result<PathGrid> {
    let mut path = connect_to_orbit_path(orbit, phi, grid)?;
    let d = path.dim();
    let n_tau = grid.n_tau();
    let n_h = grid.n_horizon();
    let tail_start_k = n_h.saturating_sub(n_tau); // grid step where ψ's window begins
    let blend_steps = ((1.0 / grid.step()).round() as usize).clamp(1, tail_start_k.max(1));
    let psi_first = psi.view().node(0).to_vec();
    for k in tail_start_k.saturating_sub(blend_steps)..tail_start_k {
        let s = (k + blend_steps - tail_start_k) as f64 / blend_steps as f64;
        let o = orbit_value(orbit, phase, k).to_vec();
        let node = path.node_mut(n_tau + k);
        for c in 0..d {
            node[c] = (1.0 - s) * o[c] + s * psi_first[c];
        }
    }
    Ok(path)
}

/// Initializer toward a terminal point: follow the orbit, then ramp
/// linearly to the target over the final time unit.
fn build_boundary_init(
    orbit: &Orbit,
    phase: usize,
    phi: &HistorySegment,
    target: &[f64],
    grid: &GridSpec,
) -> Result<PathGrid> {
    let mut path = connect_to_orbit_path(orbit, phi, grid)?;
    let d = path.dim();
    let n_tau = grid.n_tau();
    let n_h = grid.n_horizon();
    let blend_steps = ((1.0 / grid.step()).round() as usize).clamp(1, n_h);
    for k in n_h - blend_steps..=n_h {
        let s = (k + blend_steps - n_h) as f64 / blend_steps as f64;
        let o = orbit_value(orbit, phase, k).to_vec();
        let node = path.node_mut(n_tau + k);
        for c in 0..d {
            node[c] = (1.0 - s) * o[c] + s * target[c];
        }
    }
    Ok(path)
}

/// Run the inner minimization for each candidate horizon and keep the
/// envelope minimum (smallest horizon wins ties). Failed horizons are
/// recorded as `None`; only a total failure errors.
fn minimize_over_horizons(
    model: &CoefficientModel,
    start: &Orbit,
    terminal: &TerminalCondition,
    grid: &GridSpec,
    settings: &OptimizerSettings,
) -> Result<QuasipotentialResult> {
    let horizons = settings.horizons(grid.tau());
    if horizons.is_empty() {
        return Err(Error::Argument("horizon grid is empty".into()));
    }
    let mut per_horizon = Vec::with_capacity(horizons.len());
    let mut best: Option<(f64, MinimizeOutcome, f64)> = None;
    let mut last_err: Option<Error> = None;
    for &t in &horizons {
        match minimize_action(model, start, terminal, t, grid, settings) {
            Ok(out) => {
                per_horizon.push((t, Some(out.value)));
                let replace = match &best {
                    Some((v, _, _)) => out.value < *v - 1e-15,
                    None => true,
                };
                if replace {
                    best = Some((out.value, out, t));
                }
            }
            Err(e) => {
                per_horizon.push((t, None));
                last_err = Some(e);
            }
        }
    }
    let Some((value, outcome, horizon)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Numerical("no horizon succeeded".into())));
    };
    Ok(QuasipotentialResult {
        value,
        path: outcome.path,
        horizon,
        per_horizon,
        diagnostics: outcome.diagnostics,
    })
}

/// V(ψ): minimize the action from the orbit to the pinned segment ψ over
/// the horizon grid.
pub fn quasipotential_at(
    model: &CoefficientModel,
    orbit: &Orbit,
    psi: &HistorySegment,
    settings: &OptimizerSettings,
) -> Result<QuasipotentialResult> {
    minimize_over_horizons(
        model,
        orbit,
        &TerminalCondition::Segment(psi.clone()),
        orbit.grid(),
        settings,
    )
}

/// Exit thresholds of a ball domain of radius δ.
#[derive(Clone, Debug)]
pub struct ExitThresholds {
    /// Outer estimate V̄: boundary-hit at radius δ+η, extrapolated η → 0.
    pub v_upper: f64,
    /// Inner estimate V_lower: boundary-hit at radius δ-η, extrapolated.
    pub v_lower: f64,
    pub per_eta_upper: Vec<(f64, f64)>,
    pub per_eta_lower: Vec<(f64, f64)>,
    /// Full result of the tightest outer problem (smallest η): its path is
    /// the escape path used for importance-sampling tilts.
    pub boundary: QuasipotentialResult,
}

/// Evaluate the polynomial fit (degree ≤ 2) of (η, V) at η = 0.
fn extrapolate_to_zero(points: &[(f64, f64)]) -> Result<f64> {
    let n = points.len();
    debug_assert!(n >= 1);
    let deg = n.saturating_sub(1).min(2);
    let mut vander = DMatrix::zeros(n, deg + 1);
    let mut rhs = DVector::zeros(n);
    for (i, &(eta, v)) in points.iter().enumerate() {
        let mut p = 1.0;
        for j in 0..=deg {
            vander[(i, j)] = p;
            p *= eta;
        }
        rhs[i] = v;
    }
    let coeffs = if n == deg + 1 {
        vander
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("degenerate eta sequence in extrapolation".into()))?
    } else {
        vander
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(format!("extrapolation solve failed: {e}")))?
    };
    Ok(coeffs[0])
}

/// Estimate (V̄, V_lower) for a ball domain: boundary-hit problems at radii
/// δ±η over the shrinking η sequence, each minimized over the horizon grid,
/// then extrapolated to η → 0. Errors when the extrapolations cross by more
/// than 2%.
pub fn exit_thresholds(
    model: &CoefficientModel,
    domain: &DomainSpec,
    eta_sequence: &[f64],
    settings: &OptimizerSettings,
) -> Result<ExitThresholds> {
    let delta = domain.radius();
    if eta_sequence.is_empty() {
        return Err(Error::Argument("eta sequence is empty".into()));
    }
    for w in eta_sequence.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Argument("eta sequence must be strictly decreasing".into()));
        }
    }
    if eta_sequence.iter().any(|&e| !(e > 0.0 && e < delta)) {
        return Err(Error::Argument(format!(
            "every eta must lie in (0, delta = {delta})"
        )));
    }
    let orbit = domain.center();
    let grid = orbit.grid();
    let mut per_eta_upper = Vec::with_capacity(eta_sequence.len());
    let mut per_eta_lower = Vec::with_capacity(eta_sequence.len());
    let mut boundary: Option<QuasipotentialResult> = None;
    for &eta in eta_sequence {
        let up = minimize_over_horizons(
            model,
            orbit,
            &TerminalCondition::BoundaryHit { radius: delta + eta },
            grid,
            settings,
        )?;
        per_eta_upper.push((eta, up.value));
        boundary = Some(up);
        let low = minimize_over_horizons(
            model,
            orbit,
            &TerminalCondition::BoundaryHit { radius: delta - eta },
            grid,
            settings,
        )?;
        per_eta_lower.push((eta, low.value));
    }
    let v_upper = extrapolate_to_zero(&per_eta_upper)?;
    let v_lower = extrapolate_to_zero(&per_eta_lower)?;
    if v_lower > v_upper * 1.02 + 1e-12 {
        return Err(Error::Numerical(format!(
            "threshold ordering violated: V_lower = {v_lower} > V_upper = {v_upper}"
        )));
    }
    Ok(ExitThresholds {
        v_upper,
        v_lower,
        per_eta_upper,
        per_eta_lower,
        boundary: boundary.expect("eta sequence nonempty"),
    })
}
