//! Shared fixtures for the criterion benches: one calibration model and the
//! grids the hot loops run on, so every bench measures the same workload.

use sddelab_core::models::build_linear_model;
use sddelab_core::{CoefficientModel, GridSpec, HistorySegment, LinearDelayParams};

pub const TAU: f64 = 0.5;
pub const STEP: f64 = 1.0 / 64.0;

/// Drift -x(t-τ), unit additive noise.
pub fn calibration_model() -> CoefficientModel {
    build_linear_model(LinearDelayParams { a: 0.0, b: 1.0, sigma0: 1.0 }, TAU)
        .expect("calibration model")
}

pub fn zero_history() -> HistorySegment {
    HistorySegment::constant(TAU, STEP, &[0.0]).expect("history")
}

pub fn grid(horizon: f64) -> GridSpec {
    GridSpec::new(TAU, STEP, horizon).expect("grid")
}
