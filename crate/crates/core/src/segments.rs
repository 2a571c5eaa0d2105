//! History segments and sampled paths on a uniform grid.
//!
//! The state of a delay system at time t is the trajectory over [t-τ, t],
//! sampled here at spacing h with τ/h integral so delayed lookups land on
//! nodes. `sup_distance` is the uniform metric (max over nodes of Euclidean
//! distance); orbits store one period of segments and measure distance as a
//! minimum over stored phases.

use crate::error::{Error, Result};

/// Relative slack when checking that a time is a whole number of steps.
pub const GRID_RATIO_TOL: f64 = 1e-9;

fn as_grid_count(value: f64, step: f64, what: &str) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Grid(format!("step must be positive, got {step}")));
    }
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Grid(format!("{what} must be finite and >= 0, got {value}")));
    }
    let ratio = value / step;
    let count = ratio.round();
    if (ratio - count).abs() > GRID_RATIO_TOL * ratio.max(1.0) {
        return Err(Error::Grid(format!(
            "{what} = {value} is not a whole number of steps h = {step}"
        )));
    }
    Ok(count as usize)
}

/// Uniform time grid: delay τ, step h, horizon T, with τ/h a positive
/// integer and T/h a nonnegative integer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    tau: f64,
    step: f64,
    n_tau: usize,
    n_horizon: usize,
}

impl GridSpec {
    pub fn new(tau: f64, step: f64, horizon: f64) -> Result<Self> {
        let n_tau = as_grid_count(tau, step, "tau")?;
        if n_tau == 0 {
            return Err(Error::Grid(format!("tau = {tau} must be positive")));
        }
        let n_horizon = as_grid_count(horizon, step, "horizon")?;
        Ok(GridSpec { tau, step, n_tau, n_horizon })
    }

    /// Same τ and h, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        GridSpec::new(self.tau, self.step, horizon)
    }

    pub fn with_horizon_nodes(&self, n_horizon: usize) -> Self {
        GridSpec { n_horizon, ..*self }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.n_horizon as f64 * self.step
    }

    pub fn n_tau(&self) -> usize {
        self.n_tau
    }

    pub fn n_horizon(&self) -> usize {
        self.n_horizon
    }

    /// Total node count of a path on this grid: N_τ + T/h + 1.
    pub fn n_nodes(&self) -> usize {
        self.n_tau + self.n_horizon + 1
    }

    /// Time of absolute node i; node 0 sits at -τ, node N_τ at 0.
    pub fn node_time(&self, node: usize) -> f64 {
        (node as f64 - self.n_tau as f64) * self.step
    }

    /// Grid index k of a time t ∈ [0, T] (so t = k·h), rejecting off-grid t.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        let k = as_grid_count(t, self.step, "t")?;
        if k > self.n_horizon {
            return Err(Error::Grid(format!(
                "t = {t} beyond horizon {}",
                self.horizon()
            )));
        }
        Ok(k)
    }

    /// True when two grids share τ and h (horizons may differ).
    pub fn compatible(&self, other: &GridSpec) -> bool {
        self.n_tau == other.n_tau && self.step == other.step
    }
}

/// Borrowed view of N_τ+1 samples over [-τ, 0]: node 0 is the oldest
/// (-τ), the last node is the current value.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    data: &'a [f64],
    dim: usize,
    step: f64,
}

impl<'a> SegmentView<'a> {
    pub fn new(data: &'a [f64], dim: usize, step: f64) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim) && data.len() / dim >= 2);
        SegmentView { data, dim, step }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_nodes(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn n_tau(&self) -> usize {
        self.n_nodes() - 1
    }

    pub fn tau(&self) -> f64 {
        self.n_tau() as f64 * self.step
    }

    pub fn node(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Value at lag 0 (the segment's right endpoint).
    pub fn current(&self) -> &'a [f64] {
        self.node(self.n_tau())
    }

    /// Value at lag τ (the oldest sample).
    pub fn delayed(&self) -> &'a [f64] {
        self.node(0)
    }

    /// Value at lag `lag` ∈ [0, τ]; the lag must be a whole number of steps.
    pub fn at_lag(&self, lag: f64) -> Result<&'a [f64]> {
        let k = as_grid_count(lag, self.step, "lag")?;
        if k > self.n_tau() {
            return Err(Error::Grid(format!("lag {lag} exceeds tau {}", self.tau())));
        }
        Ok(self.node(self.n_tau() - k))
    }

    /// Value at a lag already expressed in steps.
    pub fn at_lag_nodes(&self, k: usize) -> &'a [f64] {
        self.node(self.n_tau() - k)
    }

    pub fn raw(&self) -> &'a [f64] {
        self.data
    }

    /// max over nodes of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n_nodes() {
            let s: f64 = self.node(i).iter().map(|v| v * v).sum();
            best = best.max(s);
        }
        best.sqrt()
    }

    pub fn to_history(&self) -> HistorySegment {
        HistorySegment {
            grid: GridSpec {
                tau: self.tau(),
                step: self.step,
                n_tau: self.n_tau(),
                n_horizon: 0,
            },
            dim: self.dim,
            data: self.data.to_vec(),
        }
    }
}

/// Owned segment over [-τ, 0].
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySegment {
    grid: GridSpec,
    dim: usize,
    data: Vec<f64>,
}

impl HistorySegment {
    /// `data` holds N_τ+1 samples of dimension `dim`, oldest first.
    pub fn new(grid: GridSpec, dim: usize, data: Vec<f64>) -> Result<Self> {
        let grid = grid.with_horizon_nodes(0);
        if dim == 0 {
            return Err(Error::Shape("dim must be positive".into()));
        }
        if data.len() != grid.n_nodes() * dim {
            return Err(Error::Shape(format!(
                "segment needs {} values ({} nodes x dim {}), got {}",
                grid.n_nodes() * dim,
                grid.n_nodes(),
                dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("segment contains non-finite values".into()));
        }
        Ok(HistorySegment { grid, dim, data })
    }

    pub fn constant(tau: f64, step: f64, value: &[f64]) -> Result<Self> {
        let grid = GridSpec::new(tau, step, 0.0)?;
        let mut data = Vec::with_capacity(grid.n_nodes() * value.len());
        for _ in 0..grid.n_nodes() {
            data.extend_from_slice(value);
        }
        HistorySegment::new(grid, value.len(), data)
    }

    /// Sample `f(u, out)` at u = -τ, -τ+h, …, 0.
    pub fn from_fn(tau: f64, step: f64, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let grid = GridSpec::new(tau, step, 0.0)?;
        let mut data = vec![0.0; grid.n_nodes() * dim];
        for i in 0..grid.n_nodes() {
            let u = grid.node_time(i);
            f(u, &mut data[i * dim..(i + 1) * dim]);
        }
        HistorySegment::new(grid, dim, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView::new(&self.data, self.dim, self.grid.step())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Sampled path over [-τ, T]: the first N_τ+1 nodes are the initial
/// segment, the rest the trajectory on (0, T].
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    grid: GridSpec,
    dim: usize,
    data: Vec<f64>,
}

impl PathGrid {
    pub fn new(grid: GridSpec, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dim must be positive".into()));
        }
        if data.len() != grid.n_nodes() * dim {
            return Err(Error::Shape(format!(
                "path needs {} values, got {}",
                grid.n_nodes() * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("path contains non-finite values".into()));
        }
        Ok(PathGrid { grid, dim, data })
    }

    /// Initial segment copied in, trajectory nodes zeroed (integrators fill them).
    pub fn from_history(history: &HistorySegment, horizon: f64) -> Result<Self> {
        let grid = history.grid().with_horizon(horizon)?;
        let mut data = vec![0.0; grid.n_nodes() * history.dim()];
        data[..history.data().len()].copy_from_slice(history.data());
        Ok(PathGrid { grid, dim: history.dim(), data })
    }

    /// Sample `f(t, out)` at every node of [-τ, T].
    pub fn from_fn(grid: GridSpec, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut data = vec![0.0; grid.n_nodes() * dim];
        for i in 0..grid.n_nodes() {
            f(grid.node_time(i), &mut data[i * dim..(i + 1) * dim]);
        }
        PathGrid::new(grid, dim, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.node_time(i)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Segment ending at grid time index k (t = k·h), as a borrowed view.
    pub fn segment_view(&self, k: usize) -> SegmentView<'_> {
        debug_assert!(k <= self.grid.n_horizon());
        let w = self.grid.n_tau() + 1;
        SegmentView::new(&self.data[k * self.dim..(k + w) * self.dim], self.dim, self.grid.step())
    }

    /// Endpoint value x(T).
    pub fn endpoint(&self) -> &[f64] {
        self.node(self.n_nodes() - 1)
    }

    /// For Euler stepping: borrow the value at grid time k·h immutably and
    /// the node one step later mutably, in one call.
    pub fn split_at_step(&mut self, k: usize) -> (&[f64], &mut [f64]) {
        debug_assert!(k < self.grid.n_horizon());
        let cur = (k + self.grid.n_tau()) * self.dim;
        let (head, tail) = self.data.split_at_mut(cur + self.dim);
        (&head[cur..], &mut tail[..self.dim])
    }

    /// The path x^S: t ↦ x(S+t) on [-τ, T-S], S a grid time.
    pub fn tail_shifted(&self, s: f64) -> Result<PathGrid> {
        let k = self.grid.grid_index(s)?;
        let grid = self.grid.with_horizon_nodes(self.grid.n_horizon() - k);
        let data = self.data[k * self.dim..].to_vec();
        PathGrid::new(grid, self.dim, data)
    }

    /// The path restricted to [-τ, S], S a grid time.
    pub fn restricted(&self, s: f64) -> Result<PathGrid> {
        let k = self.grid.grid_index(s)?;
        let grid = self.grid.with_horizon_nodes(k);
        let data = self.data[..grid.n_nodes() * self.dim].to_vec();
        PathGrid::new(grid, self.dim, data)
    }
}

/// The segment x_t for a grid time t ∈ [0, T].
pub fn segment_at(path: &PathGrid, t: f64) -> Result<HistorySegment> {
    let k = path.grid().grid_index(t)?;
    Ok(path.segment_view(k).to_history())
}

fn check_same_shape(a: &SegmentView<'_>, b: &SegmentView<'_>) -> Result<()> {
    if a.dim() != b.dim() || a.n_nodes() != b.n_nodes() || a.step() != b.step() {
        return Err(Error::Shape(format!(
            "segments disagree: dims {}/{}, nodes {}/{}, steps {}/{}",
            a.dim(),
            b.dim(),
            a.n_nodes(),
            b.n_nodes(),
            a.step(),
            b.step()
        )));
    }
    Ok(())
}

pub(crate) fn sup_distance_views(a: &SegmentView<'_>, b: &SegmentView<'_>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..a.n_nodes() {
        let (xa, xb) = (a.node(i), b.node(i));
        let s: f64 = xa.iter().zip(xb).map(|(u, v)| (u - v) * (u - v)).sum();
        best = best.max(s);
    }
    best.sqrt()
}

/// Uniform metric: max over nodes of the Euclidean distance of samples.
pub fn sup_distance(a: &HistorySegment, b: &HistorySegment) -> Result<f64> {
    let (va, vb) = (a.view(), b.view());
    check_same_shape(&va, &vb)?;
    Ok(sup_distance_views(&va, &vb))
}

/// Invariant set the domain is built around: a single equilibrium segment or
/// one period of a cycle. Stored as one contiguous path over [-τ, p] so the
/// per-phase segments are overlapping windows of it.
#[derive(Clone, Debug)]
pub struct Orbit {
    path: PathGrid,
    period_nodes: usize,
    is_equilibrium: bool,
}

impl Orbit {
    pub fn equilibrium(tau: f64, step: f64, value: &[f64]) -> Result<Self> {
        let seg = HistorySegment::constant(tau, step, value)?;
        let path = PathGrid::from_history(&seg, 0.0)?;
        Ok(Orbit { path, period_nodes: 1, is_equilibrium: true })
    }

    /// `path` covers [-τ, p] with p = period_nodes·h; consecutive segments
    /// are then one-node shifts of each other by construction.
    pub fn from_cycle(path: PathGrid, period_nodes: usize) -> Result<Self> {
        if period_nodes == 0 || period_nodes > path.grid().n_horizon() {
            return Err(Error::Argument(format!(
                "period_nodes = {period_nodes} outside the stored path (horizon nodes = {})",
                path.grid().n_horizon()
            )));
        }
        Ok(Orbit { path, period_nodes, is_equilibrium: false })
    }

    pub fn grid(&self) -> &GridSpec {
        self.path.grid()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn is_equilibrium(&self) -> bool {
        self.is_equilibrium
    }

    pub fn period(&self) -> f64 {
        self.period_nodes as f64 * self.path.grid().step()
    }

    pub fn segment_count(&self) -> usize {
        if self.is_equilibrium {
            1
        } else {
            self.period_nodes
        }
    }

    pub fn segment(&self, j: usize) -> SegmentView<'_> {
        debug_assert!(j < self.segment_count());
        self.path.segment_view(j)
    }

    pub fn path(&self) -> &PathGrid {
        &self.path
    }

    /// Equilibrium point ν* when this orbit is an equilibrium.
    pub fn equilibrium_value(&self) -> Option<&[f64]> {
        if self.is_equilibrium {
            Some(self.path.node(0))
        } else {
            None
        }
    }

    /// Per-component min/max over every stored node value.
    pub fn value_range(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..self.path.n_nodes() {
            for (c, v) in self.path.node(i).iter().enumerate() {
                lo[c] = lo[c].min(*v);
                hi[c] = hi[c].max(*v);
            }
        }
        (lo, hi)
    }

    /// Minimum over stored segments of sup_distance, with early abort once a
    /// candidate's running max exceeds the best so far.
    pub fn distance_to(&self, seg: &SegmentView<'_>) -> Result<f64> {
        let s0 = self.segment(0);
        check_same_shape(seg, &s0)?;
        let mut best = f64::INFINITY;
        let n = s0.n_nodes();
        for j in 0..self.segment_count() {
            let cand = self.segment(j);
            let mut worst = 0.0f64;
            for i in 0..n {
                let (xa, xb) = (seg.node(i), cand.node(i));
                let s: f64 = xa.iter().zip(xb).map(|(u, v)| (u - v) * (u - v)).sum();
                worst = worst.max(s);
                if worst >= best {
                    break;
                }
            }
            best = best.min(worst);
        }
        Ok(best.sqrt())
    }
}

/// Minimum of sup_distance over the orbit's stored segments.
pub fn distance_to_orbit(seg: &HistorySegment, orbit: &Orbit) -> Result<f64> {
    orbit.distance_to(&seg.view())
}
