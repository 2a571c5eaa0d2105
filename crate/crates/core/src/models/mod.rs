//! Coefficient models (b, σ) on history segments, runtime contract checks,
//! and linear-model stability analysis.
//!
//! A model packages drift and diffusion maps over segments together with the
//! declared constants they are supposed to satisfy: a Lipschitz constant κ₁
//! with |b(φ)-b(ψ)|² + |σ(φ)-σ(ψ)|² ≤ κ₁‖φ-ψ‖², a growth constant κ₂ with
//! |b(φ)|² + |σ(φ)|² ≤ κ₂(1+‖φ‖²), and (when the noise is square and
//! nondegenerate) an ellipticity floor c with ν'σσ'ν ≥ c|ν|². The constants
//! are declared by the builders and spot-checked, not derived.

mod expr;

pub use expr::{build_expression_model, Expr, ExpressionModelSpec};

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::segments::{GridSpec, HistorySegment, SegmentView};

type CoeffFn = dyn Fn(&SegmentView<'_>, &mut [f64]) + Send + Sync;
type DerivFn = dyn Fn(&SegmentView<'_>) -> Vec<SampleDerivative> + Send + Sync;

/// Derivative of (b, σ) with respect to one sampled value of the segment.
///
/// `lag_nodes` counts grid steps back from the current time: 0 is φ(0),
/// N_τ is φ(-τ). `db[(i, j)]` is ∂b_i/∂φ_j at that sample; `dsigma[j]` is
/// the d×m matrix ∂σ/∂φ_j, with `None` meaning σ does not depend on it.
pub struct SampleDerivative {
    pub lag_nodes: usize,
    pub db: DMatrix<f64>,
    pub dsigma: Option<Vec<DMatrix<f64>>>,
}

/// Immutable coefficient model; evaluation is side-effect free and safe to
/// share across threads.
pub struct CoefficientModel {
    description: String,
    dim_state: usize,
    dim_noise: usize,
    kappa1: f64,
    kappa2: f64,
    ellipticity_c: Option<f64>,
    lags: Vec<f64>,
    drift: Box<CoeffFn>,
    diffusion: Box<CoeffFn>,
    derivatives: Option<Box<DerivFn>>,
}

impl std::fmt::Debug for CoefficientModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("description", &self.description)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("kappa1", &self.kappa1)
            .field("kappa2", &self.kappa2)
            .field("ellipticity_c", &self.ellipticity_c)
            .field("lags", &self.lags)
            .finish_non_exhaustive()
    }
}

impl CoefficientModel {
    /// Assemble a model from raw parts. `lags` lists every lag (in time
    /// units) the coefficient maps read; grids are checked against it.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        description: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        kappa1: f64,
        kappa2: f64,
        ellipticity_c: Option<f64>,
        lags: Vec<f64>,
        drift: Box<CoeffFn>,
        diffusion: Box<CoeffFn>,
        derivatives: Option<Box<DerivFn>>,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::Argument("state and noise dimensions must be positive".into()));
        }
        if !(kappa1 > 0.0 && kappa1.is_finite() && kappa2 > 0.0 && kappa2.is_finite()) {
            return Err(Error::Argument(format!(
                "kappa1, kappa2 must be positive and finite, got {kappa1}, {kappa2}"
            )));
        }
        if let Some(c) = ellipticity_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Argument(format!("ellipticity floor must be positive, got {c}")));
            }
        }
        if lags.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Argument("lags must be finite and nonnegative".into()));
        }
        Ok(CoefficientModel {
            description: description.into(),
            dim_state,
            dim_noise,
            kappa1,
            kappa2,
            ellipticity_c,
            lags,
            drift,
            diffusion,
            derivatives,
        })
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn ellipticity(&self) -> Option<f64> {
        self.ellipticity_c
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Every declared lag must land on a node of `grid` and fit inside τ.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        for &lag in &self.lags {
            let ratio = lag / grid.step();
            let k = ratio.round();
            if (ratio - k).abs() > crate::segments::GRID_RATIO_TOL * ratio.max(1.0) {
                return Err(Error::Grid(format!(
                    "model lag {lag} is off the grid with step {}",
                    grid.step()
                )));
            }
            if k as usize > grid.n_tau() {
                return Err(Error::Grid(format!(
                    "model lag {lag} exceeds the grid delay {}",
                    grid.tau()
                )));
            }
        }
        Ok(())
    }

    pub fn drift_into(&self, seg: &SegmentView<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_state);
        (self.drift)(seg, out);
    }

    /// Row-major d×m output.
    pub fn diffusion_into(&self, seg: &SegmentView<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_state * self.dim_noise);
        (self.diffusion)(seg, out);
    }

    pub fn drift_vec(&self, seg: &SegmentView<'_>) -> DVector<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(seg, &mut out);
        DVector::from_vec(out)
    }

    pub fn diffusion_mat(&self, seg: &SegmentView<'_>) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(seg, &mut out);
        // stored row-major; DMatrix::from_row_slice handles the transpose
        DMatrix::from_row_slice(self.dim_state, self.dim_noise, &out)
    }

    /// Analytic per-sample derivatives, when the model provides them.
    pub fn derivatives(&self, seg: &SegmentView<'_>) -> Option<Vec<SampleDerivative>> {
        self.derivatives.as_ref().map(|f| f(seg))
    }

    pub fn has_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }
}

/// Parameters of the scalar linear delay model: drift -Aφ(0) - Bφ(-τ),
/// constant diffusion σ0. The delay term must dominate: B > A ≥ 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDelayParams {
    pub a: f64,
    pub b: f64,
    pub sigma0: f64,
}

impl LinearDelayParams {
    fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b > self.a) {
            return Err(Error::Argument(format!(
                "need B > A >= 0, got A = {}, B = {}",
                self.a, self.b
            )));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::Argument(format!("need sigma0 > 0, got {}", self.sigma0)));
        }
        Ok(())
    }
}

/// Scalar linear delay model. κ₁ = 2(A²+B²) since
/// (A|φ(0)|+B|φ(-τ)|)² ≤ 2(A²+B²)‖φ‖²; κ₂ adds the constant σ0²;
/// ellipticity floor is σ0².
pub fn build_linear_model(p: LinearDelayParams, tau: f64) -> Result<CoefficientModel> {
    p.validate()?;
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("need tau > 0, got {tau}")));
    }
    let LinearDelayParams { a, b, sigma0 } = p;
    let kappa1 = 2.0 * (a * a + b * b);
    let kappa2 = kappa1 + sigma0 * sigma0;
    let drift = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        let x0 = seg.current()[0];
        let xd = seg.at_lag(tau).expect("lag checked against grid")[0];
        out[0] = -a * x0 - b * xd;
    });
    let diffusion = Box::new(move |_: &SegmentView<'_>, out: &mut [f64]| {
        out[0] = sigma0;
    });
    let derivatives = Box::new(move |seg: &SegmentView<'_>| {
        let lag_nodes = (tau / seg.step()).round() as usize;
        vec![
            SampleDerivative {
                lag_nodes: 0,
                db: DMatrix::from_element(1, 1, -a),
                dsigma: None,
            },
            SampleDerivative {
                lag_nodes,
                db: DMatrix::from_element(1, 1, -b),
                dsigma: None,
            },
        ]
    });
    CoefficientModel::from_parts(
        format!("linear delay (A={a}, B={b}, sigma0={sigma0}, tau={tau})"),
        1,
        1,
        kappa1,
        kappa2,
        Some(sigma0 * sigma0),
        vec![0.0, tau],
        drift,
        diffusion,
        Some(derivatives),
    )
}

/// Probe grid used for feedback sign and constant estimation.
fn probe_radii() -> Vec<f64> {
    (1..=100).map(|k| k as f64 * 0.05).collect()
}

fn feedback_checks(shape: &(impl Fn(f64) -> f64 + ?Sized)) -> Result<(f64, f64)> {
    let mut sup_f2 = 0.0f64;
    let mut sup_df2 = 0.0f64;
    for r in probe_radii() {
        for r in [r, -r] {
            let fr = shape(r);
            if !fr.is_finite() {
                return Err(Error::ModelContract(format!("shape({r}) is not finite")));
            }
            if r * fr >= 0.0 {
                return Err(Error::ModelContract(format!(
                    "negative feedback requires r*f(r) < 0; got f({r}) = {fr}"
                )));
            }
            sup_f2 = sup_f2.max(fr * fr);
            let h = 1e-6 * (1.0 + r.abs());
            let df = (shape(r + h) - shape(r - h)) / (2.0 * h);
            sup_df2 = sup_df2.max(df * df);
        }
    }
    // slope at the origin too
    let h = 1e-6;
    let df0 = (shape(h) - shape(-h)) / (2.0 * h);
    sup_df2 = sup_df2.max(df0 * df0);
    Ok((sup_f2, sup_df2))
}

/// Scalar negative feedback model: drift f(φ(-τ)) with r·f(r) < 0 for r ≠ 0
/// (checked on probes), constant diffusion σ0 (σ0 = 0 gives a noise-free
/// model with no ellipticity floor). κ₁, κ₂ are probe-estimated lower bounds
/// of the true suprema. The shape's derivative is taken numerically; use
/// [`build_tanh_feedback_model`] when the default shape is wanted.
pub fn build_negative_feedback_model(
    shape: impl Fn(f64) -> f64 + Send + Sync + 'static,
    tau: f64,
    sigma0: f64,
) -> Result<CoefficientModel> {
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("need tau > 0, got {tau}")));
    }
    if !(sigma0 >= 0.0) {
        return Err(Error::Argument(format!("need sigma0 >= 0, got {sigma0}")));
    }
    let (sup_f2, sup_df2) = feedback_checks(&shape)?;
    let kappa1 = sup_df2.max(1e-12);
    let kappa2 = sup_f2 + sigma0 * sigma0 + 1e-12;
    let shape = std::sync::Arc::new(shape);
    let drift_shape = shape.clone();
    let drift = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        out[0] = drift_shape(seg.at_lag(tau).expect("lag checked against grid")[0]);
    });
    let diffusion = Box::new(move |_: &SegmentView<'_>, out: &mut [f64]| {
        out[0] = sigma0;
    });
    let deriv_shape = shape.clone();
    let derivatives = Box::new(move |seg: &SegmentView<'_>| {
        let lag_nodes = (tau / seg.step()).round() as usize;
        let r = seg.at_lag_nodes(lag_nodes)[0];
        let h = 1e-6 * (1.0 + r.abs());
        let df = (deriv_shape(r + h) - deriv_shape(r - h)) / (2.0 * h);
        vec![SampleDerivative {
            lag_nodes,
            db: DMatrix::from_element(1, 1, df),
            dsigma: None,
        }]
    });
    CoefficientModel::from_parts(
        format!("negative feedback (tau={tau}, sigma0={sigma0})"),
        1,
        1,
        kappa1,
        kappa2,
        (sigma0 > 0.0).then_some(sigma0 * sigma0),
        vec![tau],
        drift,
        diffusion,
        Some(derivatives),
    )
}

/// The default negative feedback shape f(r) = -tanh(r), with its exact
/// derivative -(1 - tanh²). κ₁ = sup|f'|² = 1, κ₂ = 1 + σ0².
pub fn build_tanh_feedback_model(tau: f64, sigma0: f64) -> Result<CoefficientModel> {
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("need tau > 0, got {tau}")));
    }
    if !(sigma0 >= 0.0) {
        return Err(Error::Argument(format!("need sigma0 >= 0, got {sigma0}")));
    }
    let drift = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        out[0] = -seg.at_lag(tau).expect("lag checked against grid")[0].tanh();
    });
    let diffusion = Box::new(move |_: &SegmentView<'_>, out: &mut [f64]| {
        out[0] = sigma0;
    });
    let derivatives = Box::new(move |seg: &SegmentView<'_>| {
        let lag_nodes = (tau / seg.step()).round() as usize;
        let t = seg.at_lag_nodes(lag_nodes)[0].tanh();
        vec![SampleDerivative {
            lag_nodes,
            db: DMatrix::from_element(1, 1, t * t - 1.0),
            dsigma: None,
        }]
    });
    CoefficientModel::from_parts(
        format!("tanh negative feedback (tau={tau}, sigma0={sigma0})"),
        1,
        1,
        1.0,
        1.0 + sigma0 * sigma0,
        (sigma0 > 0.0).then_some(sigma0 * sigma0),
        vec![tau],
        drift,
        diffusion,
        Some(derivatives),
    )
}

/// No-delay linear decay in R^d: drift -rate·φ(0), diffusion σ0·I.
/// κ₁ = rate², κ₂ = rate² + d·σ0², ellipticity floor σ0².
pub fn build_instantaneous_decay_model(dim: usize, rate: f64, sigma0: f64) -> Result<CoefficientModel> {
    if dim == 0 {
        return Err(Error::Argument("dim must be positive".into()));
    }
    if !(rate > 0.0 && sigma0 > 0.0) {
        return Err(Error::Argument(format!(
            "need rate > 0 and sigma0 > 0, got {rate}, {sigma0}"
        )));
    }
    let d = dim;
    let drift = Box::new(move |seg: &SegmentView<'_>, out: &mut [f64]| {
        for (o, x) in out.iter_mut().zip(seg.current()) {
            *o = -rate * x;
        }
    });
    let diffusion = Box::new(move |_: &SegmentView<'_>, out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = sigma0;
        }
    });
    let derivatives = Box::new(move |_: &SegmentView<'_>| {
        vec![SampleDerivative {
            lag_nodes: 0,
            db: DMatrix::from_diagonal_element(d, d, -rate),
            dsigma: None,
        }]
    });
    CoefficientModel::from_parts(
        format!("instantaneous decay (d={dim}, rate={rate}, sigma0={sigma0})"),
        dim,
        dim,
        rate * rate,
        rate * rate + dim as f64 * sigma0 * sigma0,
        Some(sigma0 * sigma0),
        vec![0.0],
        drift,
        diffusion,
        Some(derivatives),
    )
}

/// Critical delay of ẋ = -Ax(t) - Bx(t-τ): the delay at which the rightmost
/// characteristic root crosses the imaginary axis.
///
/// A purely imaginary root λ = iω of λ + A + Be^{-λτ} = 0 requires
/// cos(ωτ) = -A/B and ω = B sin(ωτ), so θ₀ = ωτ₀ is the unique solution of
/// cos θ₀ = -A/B in [π/2, π) and the crossing frequency is ω = √(B² - A²).
/// Hence τ₀ = θ₀/√(B² - A²): all roots have negative real part exactly when
/// τ < τ₀. As A ↑ B the threshold diverges, matching the delay-independent
/// stability of a dominating instantaneous term. θ₀ is found by bisection on
/// [π/2, π] to width 1e-14.
pub fn critical_delay(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b > a) {
        return Err(Error::Argument(format!("need B > A >= 0, got A = {a}, B = {b}")));
    }
    let target = -a / b;
    let f = |theta: f64| theta.cos() - target;
    let (mut lo, mut hi) = (std::f64::consts::FRAC_PI_2, std::f64::consts::PI);
    let flo = f(lo);
    if flo == 0.0 {
        return Ok(lo / (b * b - a * a).sqrt());
    }
    debug_assert!(flo > 0.0 && f(hi) < 0.0);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta0 = 0.5 * (lo + hi);
    Ok(theta0 / (b * b - a * a).sqrt())
}

/// Real part of the rightmost root of λ + A + B e^{-λτ} = 0.
///
/// Newton iterations start from a coarse grid of seeds in the rectangle
/// [-(A+B)-1, B+1] × [0, 2π/τ + A+B] (roots come in conjugate pairs, so the
/// upper half plane plus the real axis suffices); converged roots are
/// residual-verified to |·| < 1e-10 and deduplicated.
pub fn rightmost_root_real_part(a: f64, b: f64, tau: f64) -> Result<f64> {
    if !(a >= 0.0 && b > a) {
        return Err(Error::Argument(format!("need B > A >= 0, got A = {a}, B = {b}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("need tau > 0, got {tau}")));
    }
    let g = |l: Complex<f64>| l + Complex::new(a, 0.0) + Complex::new(b, 0.0) * (-l * tau).exp();
    let dg = |l: Complex<f64>| Complex::new(1.0, 0.0) - Complex::new(b * tau, 0.0) * (-l * tau).exp();

    let (x_min, x_max) = (-(a + b) - 1.0, b + 1.0);
    let y_max = 2.0 * std::f64::consts::PI / tau + (a + b);
    let (nx, ny) = (41usize, 41usize);
    let mut roots: Vec<Complex<f64>> = Vec::new();
    let mut tried = 0usize;
    for ix in 0..nx {
        for iy in 0..ny {
            let seed = Complex::new(
                x_min + (x_max - x_min) * ix as f64 / (nx - 1) as f64,
                y_max * iy as f64 / (ny - 1) as f64,
            );
            tried += 1;
            let mut l = seed;
            let mut converged = false;
            for _ in 0..80 {
                let gl = g(l);
                if gl.norm() < 1e-13 {
                    converged = true;
                    break;
                }
                let d = dg(l);
                if d.norm() < 1e-14 {
                    break;
                }
                let step = gl / d;
                l -= step;
                if !l.re.is_finite() || !l.im.is_finite() || l.norm() > 1e6 {
                    break;
                }
                if step.norm() < 1e-15 * l.norm().max(1.0) && g(l).norm() < 1e-10 {
                    converged = true;
                    break;
                }
            }
            if converged && g(l).norm() < 1e-10 {
                let l = Complex::new(l.re, l.im.abs());
                if !roots.iter().any(|r| (r - l).norm() < 1e-6) {
                    roots.push(l);
                }
            }
        }
    }
    roots
        .iter()
        .map(|r| r.re)
        .fold(None, |acc: Option<f64>, re| Some(acc.map_or(re, |m| m.max(re))))
        .ok_or_else(|| {
            Error::Numerical(format!(
                "no characteristic root converged from {tried} Newton seeds (A={a}, B={b}, tau={tau})"
            ))
        })
}

/// Observed contract quotients against the declared constants.
#[derive(Clone, Debug)]
pub struct ContractReport {
    pub declared_kappa1: f64,
    pub declared_kappa2: f64,
    pub declared_ellipticity: Option<f64>,
    /// max over probe pairs of (|Δb|² + |Δσ|²) / ‖φ-ψ‖².
    pub max_lipschitz_quotient: f64,
    /// max over probes of (|b|² + |σ|²) / (1 + ‖φ‖²).
    pub max_growth_quotient: f64,
    /// max over probe pairs of |Δσ|² / ‖φ-ψ‖² alone.
    pub max_sigma_lipschitz_quotient: f64,
    /// min over probes and directions of ν'a(φ)ν / |ν|².
    pub min_rayleigh: Option<f64>,
    pub violations: Vec<String>,
}

impl ContractReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn frob2(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Spot-check the declared constants on probe segment pairs. The report
/// flags violations instead of erroring so callers can decide.
pub fn validate_model(
    model: &CoefficientModel,
    probes: &[(HistorySegment, HistorySegment)],
) -> Result<ContractReport> {
    if probes.is_empty() {
        return Err(Error::Argument("need at least one probe pair".into()));
    }
    let d = model.dim_state();
    let mut max_lip = 0.0f64;
    let mut max_sig_lip = 0.0f64;
    let mut max_growth = 0.0f64;
    let mut min_rayleigh = f64::INFINITY;
    for (phi, psi) in probes {
        model.check_grid(phi.grid())?;
        let (vphi, vpsi) = (phi.view(), psi.view());
        let b_phi = model.drift_vec(&vphi);
        let b_psi = model.drift_vec(&vpsi);
        let s_phi = model.diffusion_mat(&vphi);
        let s_psi = model.diffusion_mat(&vpsi);
        let dist = crate::segments::sup_distance(phi, psi)?;
        if dist > 0.0 {
            let db2 = (&b_phi - &b_psi).norm_squared();
            let ds2 = frob2(&(&s_phi - &s_psi));
            max_lip = max_lip.max((db2 + ds2) / (dist * dist));
            max_sig_lip = max_sig_lip.max(ds2 / (dist * dist));
        }
        let norm_phi = vphi.sup_norm();
        max_growth = max_growth
            .max((b_phi.norm_squared() + frob2(&s_phi)) / (1.0 + norm_phi * norm_phi));
        if model.ellipticity().is_some() && model.dim_noise() == d {
            let a_mat = &s_phi * s_phi.transpose();
            for axis in 0..d {
                let mut nu = DVector::zeros(d);
                nu[axis] = 1.0;
                min_rayleigh = min_rayleigh.min((&a_mat * &nu).dot(&nu));
            }
            // a few fixed non-axis directions
            if d > 1 {
                let mut nu = DVector::from_element(d, 1.0 / (d as f64).sqrt());
                min_rayleigh = min_rayleigh.min((&a_mat * &nu).dot(&nu));
                nu[0] = -nu[0];
                min_rayleigh = min_rayleigh.min((&a_mat * &nu).dot(&nu));
            }
        }
    }
    let mut violations = Vec::new();
    if max_lip > model.kappa1() * (1.0 + 1e-9) {
        violations.push(format!(
            "Lipschitz quotient {max_lip} exceeds declared kappa1 {}",
            model.kappa1()
        ));
    }
    if max_growth > model.kappa2() * (1.0 + 1e-9) {
        violations.push(format!(
            "growth quotient {max_growth} exceeds declared kappa2 {}",
            model.kappa2()
        ));
    }
    let min_rayleigh = if min_rayleigh.is_finite() { Some(min_rayleigh) } else { None };
    if let (Some(c), Some(r)) = (model.ellipticity(), min_rayleigh) {
        if r < c * (1.0 - 1e-9) {
            violations.push(format!("Rayleigh quotient {r} below declared ellipticity {c}"));
        }
    }
    Ok(ContractReport {
        declared_kappa1: model.kappa1(),
        declared_kappa2: model.kappa2(),
        declared_ellipticity: model.ellipticity(),
        max_lipschitz_quotient: max_lip,
        max_growth_quotient: max_growth,
        max_sigma_lipschitz_quotient: max_sig_lip,
        min_rayleigh,
        violations,
    })
}
