//! The path-space action functional and its gradient.
//!
//! For square, nondegenerate diffusion the rate density is
//! Λ(φ, ν) = ½ (b(φ) - ν)' a(φ)⁻¹ (b(φ) - ν) with a = σσ'. A sampled path
//! is scored with forward-difference velocities and left-endpoint
//! quadrature, matching the Euler simulator's per-step Gaussian
//! log-density up to constants, so the optimizer's minimum is the
//! simulator's most likely discrete path.
//!
//! The same pass recovers the control u_k = σ⁻¹(ẋ_k - b), giving the exact
//! discrete identity value = ½ Σ |u_k|² h.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::Control;
use crate::models::CoefficientModel;
use crate::segments::{HistorySegment, PathGrid, SegmentView};

/// Discretized action of one path, with its per-step decomposition and the
/// recovered control.
#[derive(Clone, Debug)]
pub struct ActionReport {
    /// Σ per_step; always ≥ 0.
    pub value: f64,
    /// Λ(x_{t_k}, ẋ_k)·h for each step.
    pub per_step: Vec<f64>,
    /// u_k solving σ(x_{t_k})u_k = ẋ_k - b(x_{t_k}).
    pub control: Control,
}

fn require_square(model: &CoefficientModel) -> Result<()> {
    if model.dim_state() != model.dim_noise() {
        return Err(Error::Shape(format!(
            "action functional needs square diffusion, model has d = {}, m = {}",
            model.dim_state(),
            model.dim_noise()
        )));
    }
    Ok(())
}

fn singular() -> Error {
    Error::ModelContract("diffusion matrix is singular; the ellipticity contract is breached".into())
}

/// Solve σu = r and σ'w = u. Scalar fast path for d = 1; LU otherwise.
/// Returns (u, w) with w = a⁻¹ r.
fn solve_u_w(sigma: &[f64], d: usize, r: &[f64], u: &mut [f64], w: &mut [f64]) -> Result<()> {
    if d == 1 {
        let s = sigma[0];
        if s == 0.0 || !s.is_finite() {
            return Err(singular());
        }
        u[0] = r[0] / s;
        w[0] = u[0] / s;
        return Ok(());
    }
    let sig = DMatrix::from_row_slice(d, d, sigma);
    let lu = sig.clone().lu();
    let rv = DVector::from_row_slice(r);
    let uv = lu.solve(&rv).ok_or_else(singular)?;
    let lut = sig.transpose().lu();
    let wv = lut.solve(&uv).ok_or_else(singular)?;
    u.copy_from_slice(uv.as_slice());
    w.copy_from_slice(wv.as_slice());
    Ok(())
}

/// Λ(φ, ν) computed by factor-and-solve (no explicit inverse).
pub fn local_rate(model: &CoefficientModel, seg: &HistorySegment, nu: &[f64]) -> Result<f64> {
    local_rate_view(model, &seg.view(), nu)
}

/// [`local_rate`] on a borrowed segment view.
pub fn local_rate_view(model: &CoefficientModel, seg: &SegmentView<'_>, nu: &[f64]) -> Result<f64> {
    require_square(model)?;
    let d = model.dim_state();
    if nu.len() != d {
        return Err(Error::Shape(format!("nu has length {}, state dimension is {d}", nu.len())));
    }
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    model.drift_into(seg, &mut b);
    model.diffusion_into(seg, &mut sigma);
    let r: Vec<f64> = b.iter().zip(nu).map(|(bi, ni)| bi - ni).collect();
    let mut u = vec![0.0; d];
    let mut w = vec![0.0; d];
    solve_u_w(&sigma, d, &r, &mut u, &mut w)?;
    Ok(0.5 * u.iter().map(|v| v * v).sum::<f64>())
}

struct PassOutput {
    per_step: Vec<f64>,
    control_values: Vec<f64>,
    value: f64,
    gradient: Option<Vec<f64>>,
}

/// One sweep over the path: velocities, controls, per-step actions, and
/// (optionally) the exact gradient of the discretized sum with respect to
/// every node value, by reverse accumulation of each step's term.
fn action_pass(model: &CoefficientModel, path: &PathGrid, with_gradient: bool) -> Result<PassOutput> {
    require_square(model)?;
    model.check_grid(path.grid())?;
    if model.dim_state() != path.dim() {
        return Err(Error::Shape(format!(
            "model dimension {} vs path dimension {}",
            model.dim_state(),
            path.dim()
        )));
    }
    let d = model.dim_state();
    let grid = path.grid();
    let (h, n_tau, n_steps) = (grid.step(), grid.n_tau(), grid.n_horizon());

    let mut per_step = Vec::with_capacity(n_steps);
    let mut control_values = vec![0.0; n_steps * d];
    let mut gradient = with_gradient.then(|| vec![0.0; grid.n_nodes() * d]);

    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut r = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut w = vec![0.0; d];
    // finite-difference scratch (only used without analytic derivatives)
    let mut fd_seg = Vec::new();
    let mut fd_b = vec![0.0; d];
    let mut fd_sigma = vec![0.0; d * d];
    let lag_nodes: Vec<usize> =
        model.lags().iter().map(|l| (l / h).round() as usize).collect();

    let mut value = 0.0;
    for k in 0..n_steps {
        let seg = path.segment_view(k);
        model.drift_into(&seg, &mut b);
        model.diffusion_into(&seg, &mut sigma);
        let x_cur = path.node(k + n_tau);
        let x_next = path.node(k + n_tau + 1);
        for i in 0..d {
            r[i] = (x_next[i] - x_cur[i]) / h - b[i];
        }
        solve_u_w(&sigma, d, &r, &mut u, &mut w)?;
        let lam_h = 0.5 * u.iter().map(|v| v * v).sum::<f64>() * h;
        per_step.push(lam_h);
        value += lam_h;
        control_values[k * d..(k + 1) * d].copy_from_slice(&u);

        let Some(grad) = gradient.as_mut() else { continue };
        // velocity part: term = (h/2) r'a⁻¹r with r = ẋ - b, ∂ẋ/∂x_next = I/h
        for i in 0..d {
            grad[(k + n_tau + 1) * d + i] += w[i];
            grad[(k + n_tau) * d + i] -= w[i];
        }
        // segment part: ∂term/∂φ_j = -h (∂b)'w - h w'(∂σ)u per sample
        if let Some(derivs) = model.derivatives(&seg) {
            for sd in derivs {
                let node = (k + n_tau) - sd.lag_nodes;
                for j in 0..d {
                    let mut g = 0.0;
                    for (i, wi) in w.iter().enumerate() {
                        g -= sd.db[(i, j)] * wi;
                    }
                    if let Some(ds) = &sd.dsigma {
                        for i in 0..d {
                            for l in 0..d {
                                g -= w[i] * ds[j][(i, l)] * u[l];
                            }
                        }
                    }
                    grad[node * d + j] += h * g;
                }
            }
        } else {
            // one-sided finite differences over the lags the model reads
            fd_seg.clear();
            fd_seg.extend_from_slice(seg.raw());
            for &ln in &lag_nodes {
                let local = n_tau - ln;
                let node = k + local;
                for j in 0..d {
                    let idx = local * d + j;
                    let base = fd_seg[idx];
                    let step = 1e-7 * (1.0 + base.abs());
                    fd_seg[idx] = base + step;
                    {
                        let pseg = SegmentView::new(&fd_seg, d, h);
                        model.drift_into(&pseg, &mut fd_b);
                        model.diffusion_into(&pseg, &mut fd_sigma);
                    }
                    fd_seg[idx] = base;
                    let mut g = 0.0;
                    for i in 0..d {
                        let db = (fd_b[i] - b[i]) / step;
                        g -= db * w[i];
                        for l in 0..d {
                            let dsig = (fd_sigma[i * d + l] - sigma[i * d + l]) / step;
                            g -= w[i] * dsig * u[l];
                        }
                    }
                    grad[node * d + j] += h * g;
                }
            }
        }
    }
    Ok(PassOutput { per_step, control_values, value, gradient })
}

/// Discretized action of `path` under `model`, with per-step contributions
/// and the recovered control. A zero-horizon path scores 0.
pub fn path_action(model: &CoefficientModel, path: &PathGrid) -> Result<ActionReport> {
    let out = action_pass(model, path, false)?;
    let control = Control::new(
        *path.grid(),
        model.dim_noise(),
        out.control_values,
        None,
    )?;
    Ok(ActionReport { value: out.value, per_step: out.per_step, control })
}

/// The control u with σ(x_t)u(t) = ẋ(t) - b(x_t) along the path;
/// ½‖u‖²_{L²,discrete} equals the path action exactly.
pub fn recover_control(model: &CoefficientModel, path: &PathGrid) -> Result<Control> {
    Ok(path_action(model, path)?.control)
}

fn check_mask(path: &PathGrid, free_mask: &[bool]) -> Result<()> {
    let grid = path.grid();
    if free_mask.len() != grid.n_nodes() {
        return Err(Error::Shape(format!(
            "free mask has {} entries, path has {} nodes",
            free_mask.len(),
            grid.n_nodes()
        )));
    }
    if free_mask[..=grid.n_tau()].iter().any(|&f| f) {
        return Err(Error::Argument(
            "free mask marks initial-segment nodes; the history is pinned".into(),
        ));
    }
    Ok(())
}

/// Exact gradient of the discretized action with respect to free node
/// values. Returned flat over all nodes (dim entries per node); pinned
/// entries are zeroed. Each node couples through its own velocity terms and
/// through every segment window containing it.
pub fn action_gradient(
    model: &CoefficientModel,
    path: &PathGrid,
    free_mask: &[bool],
) -> Result<Vec<f64>> {
    Ok(action_with_gradient(model, path, free_mask)?.1)
}

/// Fused value + gradient in one pass (what the optimizer consumes).
pub fn action_with_gradient(
    model: &CoefficientModel,
    path: &PathGrid,
    free_mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    check_mask(path, free_mask)?;
    let out = action_pass(model, path, true)?;
    let mut grad = out.gradient.expect("gradient requested");
    let d = path.dim();
    for (node, free) in free_mask.iter().enumerate() {
        if !free {
            grad[node * d..(node + 1) * d].fill(0.0);
        }
    }
    Ok((out.value, grad))
}

/// Action of the path cut at grid time S: the restriction to [-τ, S] and
/// the shifted remainder x^S on [-τ, T-S]. The two values sum to the whole
/// path's action exactly (the discrete sum splits on grid nodes).
pub fn concat_action_split(model: &CoefficientModel, path: &PathGrid, s: f64) -> Result<(f64, f64)> {
    let k = path.grid().grid_index(s)?;
    if k == 0 || k == path.grid().n_horizon() {
        return Err(Error::Argument(format!(
            "split time {s} must be strictly inside (0, {})",
            path.grid().horizon()
        )));
    }
    let left = path_action(model, &path.restricted(s)?)?;
    let right = path_action(model, &path.tail_shifted(s)?)?;
    Ok((left.value, right.value))
}
