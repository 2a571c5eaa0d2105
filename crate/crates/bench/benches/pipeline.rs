//! Benchmarks for the five hot paths of the laboratory: noise-driven
//! stepping, action evaluation, action gradients, path-space minimization,
//! and first-exit sampling. Run with `cargo bench -p sddelab-bench`.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use sddelab_bench::{calibration_model, grid, zero_history, STEP, TAU};
use sddelab_core::action::{action_with_gradient, path_action};
use sddelab_core::integrate::{first_exit, simulate_sdde, DomainSpec};
use sddelab_core::quasipotential::{minimize_action, OptimizerSettings, TerminalCondition};
use sddelab_core::{Orbit, PathGrid};

fn bench_simulate(c: &mut Criterion) {
    let model = calibration_model();
    let phi = zero_history();
    let g = grid(10.0);
    let mut seed = 0u64;
    c.bench_function("simulate_sdde t=10 h=1/64", |b| {
        b.iter(|| {
            seed = seed.wrapping_add(1);
            black_box(simulate_sdde(&model, &phi, 0.1, &g, seed).unwrap())
        })
    });
}

fn wiggly_path(horizon: f64) -> PathGrid {
    let g = grid(horizon);
    PathGrid::from_fn(g, 1, |t, out| out[0] = 0.3 * (2.0 * t).sin()).expect("path")
}

fn bench_action(c: &mut Criterion) {
    let model = calibration_model();
    let path = wiggly_path(4.0);
    c.bench_function("path_action t=4 h=1/64", |b| {
        b.iter(|| black_box(path_action(&model, &path).unwrap().value))
    });
}

fn bench_gradient(c: &mut Criterion) {
    let model = calibration_model();
    let path = wiggly_path(4.0);
    let g = *path.grid();
    let mut mask = vec![false; g.n_nodes()];
    for m in mask.iter_mut().take(g.n_nodes() - 1).skip(g.n_tau() + 1) {
        *m = true;
    }
    c.bench_function("action_with_gradient t=4 h=1/64", |b| {
        b.iter(|| black_box(action_with_gradient(&model, &path, &mask).unwrap()))
    });
}

fn bench_minimize(c: &mut Criterion) {
    let model = calibration_model();
    let eq = Orbit::equilibrium(TAU, STEP, &[0.0]).expect("equilibrium");
    let base = grid(0.0);
    let settings = OptimizerSettings { restarts: 0, ..OptimizerSettings::default() };
    let mut group = c.benchmark_group("minimize");
    group.sample_size(10);
    group.bench_function("boundary hit t=1 h=1/64", |b| {
        b.iter(|| {
            black_box(
                minimize_action(
                    &model,
                    &eq,
                    &TerminalCondition::BoundaryHit { radius: 0.5 },
                    1.0,
                    &base,
                    &settings,
                )
                .unwrap()
                .value,
            )
        })
    });
    group.finish();
}

fn bench_first_exit(c: &mut Criterion) {
    let model = calibration_model();
    let phi = zero_history();
    let eq = Orbit::equilibrium(TAU, STEP, &[0.0]).expect("equilibrium");
    let domain = DomainSpec::equilibrium_ball(eq, 0.5).expect("domain");
    let g = grid(0.0);
    let mut seed = 0u64;
    c.bench_function("first_exit eps=0.2 t_max=50", |b| {
        b.iter_batched(
            || {
                seed = seed.wrapping_add(1);
                seed
            },
            |s| black_box(first_exit(&model, &phi, 0.2, &domain, 50.0, &g, s, None).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_simulate,
    bench_action,
    bench_gradient,
    bench_minimize,
    bench_first_exit
);
criterion_main!(benches);
