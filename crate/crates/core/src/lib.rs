//! Numerical laboratory for small-noise stochastic delay differential
//! equations: trajectory simulation, path-space action minimization,
//! quasipotential computation, and exit-time experiments.
//!
//! The state of a delay equation at time t is the segment
//! x_t = {x(t+u), u ∈ [-τ, 0]}, a function, not a point. Everything here is
//! built on uniform-grid discretizations of such segments ([`segments`]),
//! coefficient models over them ([`models`]), an Euler scheme with optional
//! drift controls ([`integrate`]), the quadratic action functional of the
//! small-noise large deviation principle ([`action`]), its minimization to
//! quasipotentials and exit thresholds ([`quasipotential`]), and Monte Carlo
//! exit-time experiments against those thresholds ([`exitlab`]).

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the
// out-of-range values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod error;
pub mod exitlab;
pub mod integrate;
pub mod models;
pub mod quasipotential;
pub mod rng;
pub mod segments;

pub use error::{Error, Result};
pub use models::{CoefficientModel, LinearDelayParams};
pub use segments::{GridSpec, HistorySegment, Orbit, PathGrid, SegmentView};
