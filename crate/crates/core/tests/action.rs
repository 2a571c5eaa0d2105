//! The discretized action functional: rate density, path scoring, control
//! recovery, gradients, and splitting.

use proptest::prelude::*;
use sddelab_core::action::{
    action_gradient, action_with_gradient, concat_action_split, local_rate, path_action,
    recover_control,
};
use sddelab_core::integrate::{solve_controlled, solve_dde};
use sddelab_core::models::{
    build_expression_model, build_instantaneous_decay_model, build_linear_model,
    build_tanh_feedback_model, ExpressionModelSpec,
};
use sddelab_core::{CoefficientModel, Error, GridSpec, HistorySegment, LinearDelayParams, PathGrid};

fn linear(a: f64, b: f64, sigma0: f64, tau: f64) -> CoefficientModel {
    build_linear_model(LinearDelayParams { a, b, sigma0 }, tau).unwrap()
}

/// d = m = 1, b ≡ 0, σ ≡ 1.
fn pure_noise() -> CoefficientModel {
    CoefficientModel::from_parts(
        "unit additive noise",
        1,
        1,
        1.0,
        1.0,
        Some(1.0),
        vec![],
        Box::new(|_, out: &mut [f64]| out[0] = 0.0),
        Box::new(|_, out: &mut [f64]| out[0] = 1.0),
        None,
    )
    .unwrap()
}

fn xorshift(state: &mut u64) -> f64 {
    let mut x = *state;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn rate_density_hand_values() {
    // Velocity equal to the drift costs nothing.
    let lin = linear(1.0, 2.0, 0.7, 0.5);
    let phi = HistorySegment::from_fn(0.5, 0.25, 1, |u, out| out[0] = 1.0 + u).unwrap();
    let b = lin.drift_vec(&phi.view());
    assert_eq!(local_rate(&lin, &phi, b.as_slice()).unwrap(), 0.0);

    // b = 0, sigma = 1: the density is half the squared velocity.
    let noise = pure_noise();
    let any = HistorySegment::constant(0.5, 0.25, &[3.7]).unwrap();
    assert!((local_rate(&noise, &any, &[2.0]).unwrap() - 2.0).abs() < 1e-15);

    // Drift -phi(-tau) at phi = 1 gives residual -1 and cost one half.
    let lin01 = linear(0.0, 1.0, 1.0, 0.5);
    let one = HistorySegment::constant(0.5, 0.25, &[1.0]).unwrap();
    assert!((local_rate(&lin01, &one, &[0.0]).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn rate_density_validates_inputs() {
    let lin = linear(0.0, 1.0, 1.0, 0.5);
    let one = HistorySegment::constant(0.5, 0.25, &[1.0]).unwrap();
    assert!(matches!(local_rate(&lin, &one, &[0.0, 0.0]), Err(Error::Shape(_))));

    // Rectangular diffusion has no inverse to score with.
    let rect = CoefficientModel::from_parts(
        "two states one noise",
        2,
        1,
        1.0,
        1.0,
        None,
        vec![],
        Box::new(|_, out: &mut [f64]| out.fill(0.0)),
        Box::new(|_, out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = 0.0;
        }),
        None,
    )
    .unwrap();
    let seg2 = HistorySegment::constant(0.5, 0.25, &[0.0, 0.0]).unwrap();
    assert!(matches!(local_rate(&rect, &seg2, &[0.0, 0.0]), Err(Error::Shape(_))));

    // sigma(phi) = phi(0) vanishes at the origin: contract breach.
    let degenerate = CoefficientModel::from_parts(
        "state-proportional noise",
        1,
        1,
        2.0,
        2.0,
        None,
        vec![0.0],
        Box::new(|_, out: &mut [f64]| out[0] = 0.0),
        Box::new(|seg: &sddelab_core::segments::SegmentView<'_>, out: &mut [f64]| {
            out[0] = seg.current()[0]
        }),
        None,
    )
    .unwrap();
    let zero = HistorySegment::constant(0.5, 0.25, &[0.0]).unwrap();
    assert!(matches!(local_rate(&degenerate, &zero, &[1.0]), Err(Error::ModelContract(_))));
}

/// x(t) = t driven against b(phi) = -phi(0), sigma = 1: the exact discrete
/// sum is a left rectangle rule for (1/2)(1+t)^2, whose integral on [0,1]
/// is 7/6.
#[test]
fn ramp_action_matches_the_quadrature_oracle() {
    let m = build_instantaneous_decay_model(1, 1.0, 1.0).unwrap();
    let h = 1.0 / 256.0;
    let grid = GridSpec::new(0.25, h, 1.0).unwrap();
    let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = t.max(0.0)).unwrap();
    let report = path_action(&m, &path).unwrap();

    let n = grid.n_horizon();
    let hand: f64 = (0..n).map(|k| 0.5 * (1.0 + k as f64 * h).powi(2) * h).sum();
    assert!(rel_close(report.value, hand, 1e-12), "value {} vs hand {}", report.value, hand);
    assert!(rel_close(report.value, 7.0 / 6.0, 0.02), "value {} vs 7/6", report.value);

    let sum: f64 = report.per_step.iter().sum();
    assert!(rel_close(report.value, sum, 1e-12));
    assert!(report.per_step.iter().all(|p| *p >= 0.0));
    assert_eq!(report.per_step.len(), n);

    // Recovered control is u_k = 1 + t_k and half its squared norm is the value.
    for k in 0..n {
        assert!((report.control.value(k)[0] - (1.0 + k as f64 * h)).abs() < 1e-12);
    }
    assert!(rel_close(0.5 * report.control.l2_norm_squared(), report.value, 1e-10));
}

#[test]
fn the_time_stepped_skeleton_scores_zero() {
    let m = linear(0.5, 1.0, 1.0, 0.5);
    let grid = GridSpec::new(0.5, 1.0 / 64.0, 2.0).unwrap();
    let phi = HistorySegment::from_fn(0.5, 1.0 / 64.0, 1, |u, out| out[0] = 0.4 + 0.2 * u).unwrap();
    let path = solve_dde(&m, &phi, &grid).unwrap();
    let report = path_action(&m, &path).unwrap();
    // Forward differences undo the Euler update except for rounding.
    assert!(report.value <= 1e-25, "skeleton action {}", report.value);
    let u = recover_control(&m, &path).unwrap();
    assert!(u.values().iter().all(|v| v.abs() < 1e-11));
}

/// Subsample an exact-to-rounding fine solution onto coarser grids. The
/// per-step residual (forward difference minus drift) is O(h), so the
/// recovered control norm decays at first order while the action, its
/// squared half-norm, decays at second order.
#[test]
fn subsampled_fine_solution_action_decays_quadratically() {
    let tau = 0.5;
    let m = linear(0.5, 1.0, 1.0, tau);
    let h_fine = tau / 8192.0;
    let fine_grid = GridSpec::new(tau, h_fine, 2.0).unwrap();
    let phi = HistorySegment::from_fn(tau, h_fine, 1, |u, out| out[0] = 0.5 + 0.3 * u).unwrap();
    let fine = solve_dde(&m, &phi, &fine_grid).unwrap();

    let mut values = Vec::new();
    for divisor in [256.0, 512.0] {
        let h = tau / divisor;
        let stride = (h / h_fine).round() as usize;
        let grid = GridSpec::new(tau, h, 2.0).unwrap();
        let mut coarse = PathGrid::from_fn(grid, 1, |_, out| out[0] = 0.0).unwrap();
        for i in 0..grid.n_nodes() {
            coarse.node_mut(i)[0] = fine.node(i * stride)[0];
        }
        values.push(path_action(&m, &coarse).unwrap().value);
    }
    assert!(values[0] <= 0.01, "coarse action {}", values[0]);

    // The action more than halves per halving; its measured slope is two.
    let ratio = values[0] / values[1];
    assert!(ratio >= 2.0, "halving ratio {ratio}, actions {values:?}");
    assert!(
        (2f64.powf(1.7)..=2f64.powf(2.3)).contains(&ratio),
        "action slope off second order: ratio {ratio}, actions {values:?}"
    );

    // The control scale itself converges at first order.
    let norm_ratio = (values[0] / values[1]).sqrt();
    assert!(
        (2f64.powf(0.7)..=2f64.powf(1.3)).contains(&norm_ratio),
        "control norm ratio {norm_ratio}"
    );
}

/// With linear drift and constant diffusion the residual is linear in the
/// deviation from the skeleton, so the action is exactly quadratic in it.
#[test]
fn doubling_the_deviation_quadruples_the_action() {
    let m = linear(0.5, 1.0, 1.0, 0.5);
    let grid = GridSpec::new(0.5, 1.0 / 64.0, 2.0).unwrap();
    let phi = HistorySegment::constant(0.5, 1.0 / 64.0, &[0.3]).unwrap();
    let skeleton = solve_dde(&m, &phi, &grid).unwrap();

    let bump = |t: f64| 0.1 * t * (3.0 * t).cos();
    let mut one = skeleton.clone();
    let mut two = skeleton.clone();
    for i in grid.n_tau() + 1..grid.n_nodes() {
        let t = grid.node_time(i);
        one.node_mut(i)[0] += bump(t);
        two.node_mut(i)[0] += 2.0 * bump(t);
    }
    let v1 = path_action(&m, &one).unwrap().value;
    let v2 = path_action(&m, &two).unwrap().value;
    assert!(v1 > 1e-4);
    assert!(rel_close(v2, 4.0 * v1, 1e-10), "v2 {} vs 4 v1 {}", v2, 4.0 * v1);
}

/// Feeding the recovered control back into the controlled skeleton replays
/// the original nodes: both maps are the same forward-difference bijection.
#[test]
fn any_sampled_path_replays_from_its_recovered_control() {
    let m = build_tanh_feedback_model(1.0, 0.8).unwrap();
    for h in [1.0 / 64.0, 1.0 / 128.0] {
        let grid = GridSpec::new(1.0, h, 2.0).unwrap();
        let wave = |t: f64| (2.0 * t).sin() + 0.3;
        let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = wave(t)).unwrap();
        let phi = HistorySegment::from_fn(1.0, h, 1, |u, out| out[0] = wave(u)).unwrap();

        let u = recover_control(&m, &path).unwrap();
        let replay = solve_controlled(&m, &phi, &u, &grid).unwrap();
        let worst = path
            .data()
            .iter()
            .zip(replay.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-10, "h = {h}, replay error {worst}");
    }
}

/// Run a smooth control through the skeleton and recover it again.
#[test]
fn control_recovery_inverts_the_controlled_solver() {
    let m = linear(0.5, 1.0, 0.9, 0.5);
    let grid = GridSpec::new(0.5, 1.0 / 32.0, 1.5).unwrap();
    let phi = HistorySegment::constant(0.5, 1.0 / 32.0, &[0.2]).unwrap();
    let u = sddelab_core::integrate::Control::from_fn(grid, 1, |t, out| {
        out[0] = 0.4 * (3.0 * t).sin()
    })
    .unwrap();
    let x = solve_controlled(&m, &phi, &u, &grid).unwrap();
    let back = recover_control(&m, &x).unwrap();
    let worst = u
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-10, "control recovery error {worst}");

    // Half the squared control norm is the action of the path it produces.
    let report = path_action(&m, &x).unwrap();
    assert!(rel_close(0.5 * back.l2_norm_squared(), report.value, 1e-10));
}

fn central_difference(
    model: &CoefficientModel,
    path: &PathGrid,
    node: usize,
    comp: usize,
    step: f64,
) -> f64 {
    let d = path.dim();
    let mut plus = path.clone();
    plus.node_mut(node)[comp] += step;
    let mut minus = path.clone();
    minus.node_mut(node)[comp] -= step;
    let _ = d;
    let fp = path_action(model, &plus).unwrap().value;
    let fm = path_action(model, &minus).unwrap().value;
    (fp - fm) / (2.0 * step)
}

fn check_gradient_against_differences(model: &CoefficientModel, tau: f64, tol: f64) {
    let h = 1.0 / 32.0;
    let grid = GridSpec::new(tau, h, 1.5).unwrap();
    let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = (2.0 * t).sin() + 0.3 * t).unwrap();
    let mut mask = vec![false; grid.n_nodes()];
    for slot in mask.iter_mut().take(grid.n_nodes() - 1).skip(grid.n_tau() + 1) {
        *slot = true;
    }
    let (value, grad) = action_with_gradient(model, &path, &mask).unwrap();
    assert!(rel_close(value, path_action(model, &path).unwrap().value, 1e-15));
    for (node, free) in mask.iter().enumerate() {
        if !free {
            assert_eq!(grad[node], 0.0);
        }
    }

    let mut state = 0x5eed_0001u64;
    for _ in 0..20 {
        let span = grid.n_nodes() - 2 - grid.n_tau();
        let node = grid.n_tau() + 1 + (xorshift(&mut state) * span as f64) as usize;
        let fd = central_difference(model, &path, node, 0, 1e-5);
        let err = (grad[node] - fd).abs() / fd.abs().max(1e-8);
        assert!(err < tol, "node {node}: analytic {} vs central {fd}, rel {err}", grad[node]);
    }
}

#[test]
fn gradient_matches_central_differences_on_the_linear_model() {
    check_gradient_against_differences(&linear(0.5, 1.0, 0.8, 0.5), 0.5, 1e-6);
}

#[test]
fn gradient_matches_central_differences_on_the_saturating_model() {
    check_gradient_against_differences(&build_tanh_feedback_model(1.0, 0.7).unwrap(), 1.0, 1e-6);
}

#[test]
fn gradient_falls_back_to_internal_differencing_without_model_derivatives() {
    let m = build_expression_model(&ExpressionModelSpec {
        tau: 0.5,
        drift: "-x + 0.5*tanh(x_tau)".into(),
        diffusion: "1".into(),
        extra_lags: vec![],
        kappa1: 3.0,
        kappa2: 4.0,
        ellipticity_c: Some(1.0),
    })
    .unwrap();
    assert!(!m.has_derivatives());
    check_gradient_against_differences(&m, 0.5, 1e-5);
}

/// b = 0, sigma = 1: the action is sum (dx_k)^2 / (2h) and its gradient at
/// an interior node is (2 x_j - x_{j-1} - x_{j+1}) / h.
#[test]
fn pure_noise_gradient_is_the_discrete_laplacian() {
    let m = pure_noise();
    let h = 1.0 / 16.0;
    let grid = GridSpec::new(0.25, h, 1.0).unwrap();
    let mut state = 0xfeed_beefu64;
    let path = PathGrid::from_fn(grid, 1, |_, out| out[0] = 2.0 * xorshift(&mut state) - 1.0)
        .unwrap();
    let mut mask = vec![false; grid.n_nodes()];
    for slot in mask.iter_mut().skip(grid.n_tau() + 1) {
        *slot = true;
    }
    let grad = action_gradient(&m, &path, &mask).unwrap();

    let x = |i: usize| path.node(i)[0];
    let last = grid.n_nodes() - 1;
    for j in grid.n_tau() + 1..last {
        let hand = (2.0 * x(j) - x(j - 1) - x(j + 1)) / h;
        assert!(
            (grad[j] - hand).abs() <= 1e-12 * hand.abs().max(1.0),
            "node {j}: {} vs {hand}",
            grad[j]
        );
    }
    let hand_last = (x(last) - x(last - 1)) / h;
    assert!((grad[last] - hand_last).abs() <= 1e-12 * hand_last.abs().max(1.0));
}

#[test]
fn mask_shape_and_pinned_segment_are_enforced() {
    let m = pure_noise();
    let grid = GridSpec::new(0.25, 0.25, 1.0).unwrap();
    let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = t).unwrap();

    let short = vec![true; grid.n_nodes() - 1];
    assert!(matches!(action_gradient(&m, &path, &short), Err(Error::Shape(_))));

    let mut touches_history = vec![false; grid.n_nodes()];
    touches_history[grid.n_tau()] = true;
    assert!(matches!(
        action_gradient(&m, &path, &touches_history),
        Err(Error::Argument(_))
    ));
}

#[test]
fn split_actions_add_up_exactly() {
    let m = build_tanh_feedback_model(0.5, 0.9).unwrap();
    let h = 1.0 / 16.0;
    let grid = GridSpec::new(0.5, h, 1.5).unwrap();
    let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = (3.0 * t).sin() - 0.2 * t).unwrap();
    let report = path_action(&m, &path).unwrap();

    for k in 1..grid.n_horizon() {
        let s = k as f64 * h;
        let (left, right) = concat_action_split(&m, &path, s).unwrap();
        assert!(
            rel_close(left + right, report.value, 1e-12),
            "split at {s}: {left} + {right} vs {}",
            report.value
        );
    }

    // The first-step split isolates the first local contribution.
    let (first, _) = concat_action_split(&m, &path, h).unwrap();
    assert!(rel_close(first, report.per_step[0], 1e-14));

    assert!(concat_action_split(&m, &path, 0.0).is_err());
    assert!(concat_action_split(&m, &path, 1.5).is_err());
    assert!(concat_action_split(&m, &path, 0.5 * h).is_err());
}

#[test]
fn zero_horizon_paths_score_zero() {
    let m = pure_noise();
    let grid = GridSpec::new(0.5, 0.25, 0.0).unwrap();
    let path = PathGrid::from_fn(grid, 1, |_, out| out[0] = 1.3).unwrap();
    let report = path_action(&m, &path).unwrap();
    assert_eq!(report.value, 0.0);
    assert!(report.per_step.is_empty());
}

/// Drift reading only the increment phi(-tau) - phi(0) with constant noise
/// cannot see a global state shift.
#[test]
fn difference_only_drift_ignores_constant_shifts() {
    let m = build_expression_model(&ExpressionModelSpec {
        tau: 0.5,
        drift: "x_tau - x".into(),
        diffusion: "1".into(),
        extra_lags: vec![],
        kappa1: 2.0,
        kappa2: 3.0,
        ellipticity_c: Some(1.0),
    })
    .unwrap();
    let grid = GridSpec::new(0.5, 1.0 / 32.0, 1.0).unwrap();
    let path = PathGrid::from_fn(grid, 1, |t, out| out[0] = (4.0 * t).cos() + t).unwrap();
    let mut shifted = path.clone();
    for i in 0..grid.n_nodes() {
        shifted.node_mut(i)[0] += 0.7;
    }
    let a = path_action(&m, &path).unwrap().value;
    let b = path_action(&m, &shifted).unwrap().value;
    assert!(rel_close(a, b, 1e-12), "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random node data: the score is nonnegative, per-step terms tile it,
    /// the recovered control reproduces it, and any grid split is exact.
    #[test]
    fn random_paths_score_consistently(values in prop::collection::vec(-2.0f64..2.0, 10)) {
        let m = build_tanh_feedback_model(0.5, 1.0).unwrap();
        let grid = GridSpec::new(0.5, 0.25, 2.0).unwrap();
        prop_assert_eq!(grid.n_nodes(), 11);
        let mut data = vec![0.1; 11];
        data[1..].copy_from_slice(&values);
        let path = PathGrid::new(grid, 1, data).unwrap();

        let report = path_action(&m, &path).unwrap();
        prop_assert!(report.value >= 0.0);
        prop_assert!(report.per_step.iter().all(|p| *p >= 0.0));
        let sum: f64 = report.per_step.iter().sum();
        prop_assert!(rel_close(report.value, sum, 1e-12));
        prop_assert!(rel_close(0.5 * report.control.l2_norm_squared(), report.value + 1e-300, 1e-10));

        for k in 1..grid.n_horizon() {
            let (l, r) = concat_action_split(&m, &path, k as f64 * 0.25).unwrap();
            prop_assert!(rel_close(l + r, report.value + 1e-300, 1e-12));
        }
    }

    /// The score vanishes exactly when every forward difference equals the
    /// drift of its segment.
    #[test]
    fn zero_action_certifies_a_skeleton(seed in 0u64..1000) {
        let m = linear(0.4, 0.8, 1.0, 0.5);
        let grid = GridSpec::new(0.5, 0.25, 1.0).unwrap();
        let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).max(1);
        let phi = HistorySegment::from_fn(0.5, 0.25, 1, |_, out| {
            out[0] = xorshift(&mut state) - 0.5
        }).unwrap();
        let path = solve_dde(&m, &phi, &grid).unwrap();
        prop_assert!(path_action(&m, &path).unwrap().value <= 1e-25);

        // Any single-node defect re-prices it strictly positive.
        let mut broken = path.clone();
        broken.node_mut(grid.n_nodes() - 1)[0] += 0.25;
        prop_assert!(path_action(&m, &broken).unwrap().value > 1e-6);
    }
}
