//! Finite differences for the one-dimensional SPDE
//!
//! ```text
//! du = ((1/2) a_t D²u + f) dt + (σ_t D u + g) dw_t,   x in (x_lo, x_hi),
//! ```
//!
//! with Dirichlet data. Each step advances the drift with a Crank-Nicolson
//! (θ = 1/2) tridiagonal solve and applies the noise explicitly,
//! Euler-Maruyama style, with a centred first difference. Coefficients, `f`
//! and `g` are evaluated at the left end of each step.
//!
//! When `dt <= dx² / (2 max a)` the explicit half of the drift has
//! nonnegative weights and the implicit half is an M-matrix, so with `σ = 0`
//! the scheme maps nonpositive data to nonpositive solutions exactly.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::error::{invalid, Error, Result};
use crate::paths::{SamplePath, TimeGrid};
use crate::report::Report;

/// Space-time scalar function `(t, x) -> value`.
pub type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Function of one variable (time or space).
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Uniform grid `x_i = x_lo + i dx`, `i = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    x_lo: f64,
    x_hi: f64,
    cells: usize,
}

impl SpaceGrid {
    pub fn new(x_lo: f64, x_hi: f64, cells: usize) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return invalid(format!("space interval ({x_lo}, {x_hi}) is empty"));
        }
        if cells < 2 {
            return invalid("space grid needs at least two cells");
        }
        Ok(Self { x_lo, x_hi, cells })
    }

    /// Grid with spacing `dx` on `[x_lo, x_hi]`.
    pub fn with_spacing(x_lo: f64, x_hi: f64, dx: f64) -> Result<Self> {
        let r = (x_hi - x_lo) / dx;
        let cells = r.round();
        if !(dx > 0.0) || (r - cells).abs() > 1e-9 * r.max(1.0) {
            return invalid(format!(
                "interval ({x_lo}, {x_hi}) is not a multiple of dx = {dx}"
            ));
        }
        Self::new(x_lo, x_hi, cells as usize)
    }

    #[inline]
    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    #[inline]
    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of nodes, `M + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.cells + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.cells as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i == self.cells {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.dx()
        }
    }

    /// Node index equal to `x`, if any.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.x_lo) / self.dx();
        let i = r.round();
        if i < 0.0 || i > self.cells as f64 || (r - i).abs() > 1e-9 * r.abs().max(1.0) {
            None
        } else {
            Some(i as usize)
        }
    }
}

/// A coefficient process sampled on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// One value per time-grid point.
    Series(Vec<f64>),
}

impl Coefficient {
    #[inline]
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Series(s) => s[n],
        }
    }

    fn check_len(&self, len: usize, name: &str) -> Option<String> {
        match self {
            Coefficient::Series(s) if s.len() != len => Some(format!(
                "{name} has {} samples but the time grid has {len} points",
                s.len()
            )),
            _ => None,
        }
    }

    fn max_over(&self, len: usize) -> f64 {
        (0..len)
            .map(|n| self.at(n))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

/// Problem data for one SPDE solve.
#[derive(Clone)]
pub struct SpdeProblem {
    pub interval: (f64, f64),
    pub a: Coefficient,
    pub sigma: Coefficient,
    /// Coercivity constants with `δ₀ <= δ₁ a <= a - σ² <= 1/δ₀`.
    pub delta0: f64,
    pub delta1: f64,
    pub f: Option<FieldFn>,
    pub g: Option<FieldFn>,
    pub bc_lo: ScalarFn,
    pub bc_hi: ScalarFn,
    pub ic: ScalarFn,
    /// Require `f = g = 0` for `x >= 1`.
    pub compact_forcing: bool,
}

impl fmt::Debug for SpdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdeProblem")
            .field("interval", &self.interval)
            .field("a", &self.a)
            .field("sigma", &self.sigma)
            .field("delta0", &self.delta0)
            .field("delta1", &self.delta1)
            .field("has_f", &self.f.is_some())
            .field("has_g", &self.g.is_some())
            .field("compact_forcing", &self.compact_forcing)
            .finish()
    }
}

impl SpdeProblem {
    /// Zero data on `(x_lo, x_hi)` with `a = 1`, `σ = 0`.
    pub fn new(x_lo: f64, x_hi: f64) -> Self {
        Self {
            interval: (x_lo, x_hi),
            a: Coefficient::Constant(1.0),
            sigma: Coefficient::Constant(0.0),
            delta0: 1.0,
            delta1: 1.0,
            f: None,
            g: None,
            bc_lo: Arc::new(|_| 0.0),
            bc_hi: Arc::new(|_| 0.0),
            ic: Arc::new(|_| 0.0),
            compact_forcing: false,
        }
    }

    /// Sets `a`, `σ` and the tightest coercivity constants they admit.
    pub fn with_coefficients(
        mut self,
        a: impl Into<Coefficient>,
        sigma: impl Into<Coefficient>,
    ) -> Self {
        self.a = a.into();
        self.sigma = sigma.into();
        let (d0, d1) = tight_coercivity(&self.a, &self.sigma);
        self.delta0 = d0;
        self.delta1 = d1;
        self
    }

    pub fn with_coercivity(mut self, delta0: f64, delta1: f64) -> Self {
        self.delta0 = delta0;
        self.delta1 = delta1;
        self
    }

    pub fn with_ic(mut self, ic: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.ic = Arc::new(ic);
        self
    }

    pub fn with_bc(
        mut self,
        lo: impl Fn(f64) -> f64 + Send + Sync + 'static,
        hi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.bc_lo = Arc::new(lo);
        self.bc_hi = Arc::new(hi);
        self
    }

    pub fn with_f(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Some(Arc::new(f));
        self
    }

    pub fn with_g(mut self, g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    pub fn with_compact_forcing(mut self, on: bool) -> Self {
        self.compact_forcing = on;
        self
    }

    #[inline]
    pub fn f_at(&self, t: f64, x: f64) -> f64 {
        self.f.as_ref().map_or(0.0, |f| f(t, x))
    }

    #[inline]
    pub fn g_at(&self, t: f64, x: f64) -> f64 {
        self.g.as_ref().map_or(0.0, |g| g(t, x))
    }

    /// The problem for `scale · u`: every datum multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        let (ic, lo, hi) = (self.ic.clone(), self.bc_lo.clone(), self.bc_hi.clone());
        out.ic = Arc::new(move |x| scale * ic(x));
        out.bc_lo = Arc::new(move |t| scale * lo(t));
        out.bc_hi = Arc::new(move |t| scale * hi(t));
        out.f = self
            .f
            .clone()
            .map(|f| Arc::new(move |t, x| scale * f(t, x)) as FieldFn);
        out.g = self
            .g
            .clone()
            .map(|g| Arc::new(move |t, x| scale * g(t, x)) as FieldFn);
        out
    }

    /// The problem for `u - ρ v`, `ρ` constant, sharing these coefficients.
    pub fn difference(&self, other: &SpdeProblem, rho: f64) -> Self {
        let mut out = self.clone();
        let (ic1, ic2) = (self.ic.clone(), other.ic.clone());
        out.ic = Arc::new(move |x| ic1(x) - rho * ic2(x));
        let (l1, l2) = (self.bc_lo.clone(), other.bc_lo.clone());
        out.bc_lo = Arc::new(move |t| l1(t) - rho * l2(t));
        let (h1, h2) = (self.bc_hi.clone(), other.bc_hi.clone());
        out.bc_hi = Arc::new(move |t| h1(t) - rho * h2(t));
        let (f1, f2) = (self.clone(), other.clone());
        out.f = Some(Arc::new(move |t, x| f1.f_at(t, x) - rho * f2.f_at(t, x)));
        let (g1, g2) = (self.clone(), other.clone());
        out.g = Some(Arc::new(move |t, x| g1.g_at(t, x) - rho * g2.g_at(t, x)));
        out
    }
}

/// Largest `(δ₀, δ₁)` in `(0, 1]` satisfying the coercivity chain on the
/// sampled coefficients (finite series only; constants are treated as one
/// sample).
fn tight_coercivity(a: &Coefficient, sigma: &Coefficient) -> (f64, f64) {
    let samples: Vec<(f64, f64)> = match (a, sigma) {
        (Coefficient::Series(x), Coefficient::Series(y)) => {
            x.iter().copied().zip(y.iter().copied()).collect()
        }
        (Coefficient::Series(x), s) => x.iter().map(|&v| (v, s.at(0))).collect(),
        (c, Coefficient::Series(y)) => y.iter().map(|&v| (c.at(0), v)).collect(),
        (c, s) => vec![(c.at(0), s.at(0))],
    };
    let mut d1 = 1.0f64;
    let mut hi = 0.0f64;
    for &(a, s) in &samples {
        let eff = a - s * s;
        if a > 0.0 {
            d1 = d1.min(eff / a);
        }
        hi = hi.max(eff);
    }
    let lo = samples
        .iter()
        .map(|&(a, _)| d1 * a)
        .fold(f64::INFINITY, f64::min);
    let d0 = lo.min(if hi > 0.0 { 1.0 / hi } else { 1.0 }).min(1.0);
    (d0.max(0.0), d1.max(0.0))
}

/// A space-time field `u(t_n, x_i)` and the Wiener increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub space: SpaceGrid,
    pub time: TimeGrid,
    /// `(N + 1) × (M + 1)`, time-major.
    pub values: Array2<f64>,
    pub noise: Vec<f64>,
    pub seed: u64,
}

impl FieldSolution {
    /// Deterministic field sampled from `f(t, x)`; carries no noise.
    pub fn from_fn(space: SpaceGrid, time: TimeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((time.len(), space.len()), |(n, i)| {
            f(time.time(n), space.x(i))
        });
        Self {
            space,
            time,
            values,
            noise: Vec::new(),
            seed: 0,
        }
    }

    #[inline]
    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.values.row(n)
    }

    #[inline]
    pub fn at(&self, n: usize, i: usize) -> f64 {
        self.values[[n, i]]
    }

    /// Whether both fields share grids and driving noise.
    pub fn same_setting(&self, other: &FieldSolution) -> bool {
        self.space == other.space && self.time == other.time && self.noise == other.noise
    }

    /// `α · self + β · other` on a shared setting.
    pub fn combine(&self, alpha: f64, other: &FieldSolution, beta: f64) -> Result<FieldSolution> {
        if !self.same_setting(other) {
            return Err(Error::GridMismatch(
                "fields do not share grids and noise".into(),
            ));
        }
        let mut out = self.clone();
        out.values = &self.values * alpha + &other.values * beta;
        Ok(out)
    }

    /// `∫ |u⁺(t_n)|² dx`, trapezoid in space.
    pub fn positive_energy(&self, n: usize) -> f64 {
        trapezoid_sq(self.row(n).iter().map(|v| v.max(0.0)), self.space)
    }

    /// `∫ |u(t_n)|² dx`, trapezoid in space.
    pub fn energy(&self, n: usize) -> f64 {
        trapezoid_sq(self.row(n).iter().copied(), self.space)
    }

    /// `∫ |D_x u(t_n)|² dx` with forward differences per cell.
    pub fn dirichlet_energy(&self, n: usize) -> f64 {
        let dx = self.space.dx();
        let row = self.row(n);
        row.windows(2)
            .into_iter()
            .map(|w| ((w[1] - w[0]) / dx).powi(2))
            .sum::<f64>()
            * dx
    }
}

fn trapezoid_sq(values: impl ExactSizeIterator<Item = f64>, space: SpaceGrid) -> f64 {
    let last = values.len() - 1;
    values
        .enumerate()
        .map(|(i, v)| {
            if i == 0 || i == last {
                0.5 * v * v
            } else {
                v * v
            }
        })
        .sum::<f64>()
        * space.dx()
}

/// What went wrong first in [`stability_check`].
#[derive(Debug, Clone, PartialEq)]
enum Guard {
    Grid(String),
    Coercivity { t: f64, excess: f64, msg: String },
    Cfl { excess: f64, msg: String },
}

fn first_violation(prob: &SpdeProblem, space: &SpaceGrid, time: &TimeGrid) -> Vec<Guard> {
    let mut out = Vec::new();
    let len = time.len();
    for (c, name) in [(&prob.a, "a"), (&prob.sigma, "sigma")] {
        if let Some(msg) = c.check_len(len, name) {
            out.push(Guard::Grid(msg));
        }
    }
    let (lo, hi) = prob.interval;
    if (space.x_lo() - lo).abs() > 1e-12 || (space.x_hi() - hi).abs() > 1e-12 {
        out.push(Guard::Grid(format!(
            "space grid [{}, {}] does not match the problem interval ({lo}, {hi})",
            space.x_lo(),
            space.x_hi()
        )));
    }
    if !out.is_empty() {
        return out;
    }

    let (d0, d1) = (prob.delta0, prob.delta1);
    if !(d0 > 0.0 && d0 <= 1.0 && d1 > 0.0 && d1 <= 1.0) {
        out.push(Guard::Coercivity {
            t: 0.0,
            excess: f64::INFINITY,
            msg: format!("coercivity constants must lie in (0, 1], got δ0 = {d0}, δ1 = {d1}"),
        });
        return out;
    }
    let mut worst: Option<Guard> = None;
    let mut worst_excess = 0.0;
    for n in 0..len {
        let a = prob.a.at(n);
        let s = prob.sigma.at(n);
        let eff = a - s * s;
        let chain = [
            (d0 - d1 * a, "δ0 <= δ1 a"),
            (d1 * a - eff, "δ1 a <= a - σ²"),
            (eff - 1.0 / d0, "a - σ² <= 1/δ0"),
        ];
        for (gap, what) in chain {
            // Relative slack for rounding in a - σ².
            if gap > 1e-12 * a.abs().max(1.0) && gap > worst_excess {
                worst_excess = gap;
                worst = Some(Guard::Coercivity {
                    t: time.time(n),
                    excess: gap,
                    msg: format!(
                        "coercivity {what} fails at t = {} (a = {a}, σ = {s}, δ0 = {d0}, δ1 = {d1})",
                        time.time(n)
                    ),
                });
            }
        }
    }
    if let Some(g) = worst {
        out.push(g);
    }

    let a_max = prob.a.max_over(len);
    let dx = space.dx();
    let limit = dx * dx / (2.0 * a_max);
    if time.dt() > limit * (1.0 + 1e-12) {
        out.push(Guard::Cfl {
            excess: time.dt() / limit - 1.0,
            msg: format!(
                "cfl: dt = {} exceeds dx²/(2 max a) = {limit} (dx = {dx}, max a = {a_max})",
                time.dt()
            ),
        });
    }
    out
}

/// Checks grid compatibility, coercivity at every time step and the step
/// restriction `dt <= dx² / (2 max a)`.
///
/// `max_violation` is the largest relative excess found and `context`
/// describes the first failing guard (grid, then coercivity, then CFL).
pub fn stability_check(prob: &SpdeProblem, space: &SpaceGrid, time: &TimeGrid) -> Report {
    let guards = first_violation(prob, space, time);
    let Some(first) = guards.first() else {
        return Report::new("stability", 0.0, 0.0).with_context("ok");
    };
    let excess = guards
        .iter()
        .map(|g| match g {
            Guard::Grid(_) => f64::INFINITY,
            Guard::Coercivity { excess, .. } | Guard::Cfl { excess, .. } => *excess,
        })
        .fold(0.0, f64::max);
    let report = Report::new("stability", excess, 0.0);
    match first {
        Guard::Grid(msg) => report.with_context(format!("grid: {msg}")),
        Guard::Coercivity { t, msg, .. } => report.at(*t, f64::NAN).with_context(msg.clone()),
        Guard::Cfl { msg, .. } => report.with_context(msg.clone()),
    }
}

/// Validates the data-support invariant of the compact-forcing setting.
fn check_forcing_support(prob: &SpdeProblem, space: &SpaceGrid, time: &TimeGrid) -> Result<()> {
    if !prob.compact_forcing {
        return Ok(());
    }
    for n in 0..time.len() {
        let t = time.time(n);
        for i in 0..space.len() {
            let x = space.x(i);
            if x >= 1.0 && (prob.f_at(t, x) != 0.0 || prob.g_at(t, x) != 0.0) {
                return invalid(format!(
                    "forcing does not vanish at (t, x) = ({t}, {x}) with x >= 1"
                ));
            }
        }
    }
    Ok(())
}

/// Time-steps the SPDE on `space × time` with the given Wiener driver.
///
/// The result is a deterministic function of the problem, the grids and
/// the driver's values.
pub fn solve_spde(
    prob: &SpdeProblem,
    space: &SpaceGrid,
    time: &TimeGrid,
    driver: &SamplePath,
) -> Result<FieldSolution> {
    if driver.grid() != time {
        return Err(Error::GridMismatch(format!(
            "driver grid ({} steps to {}) differs from the solver time grid ({} steps to {})",
            driver.grid().steps(),
            driver.grid().horizon(),
            time.steps(),
            time.horizon()
        )));
    }
    if let Some(guard) = first_violation(prob, space, time).into_iter().next() {
        return match guard {
            Guard::Grid(msg) => Err(Error::GridMismatch(msg)),
            Guard::Coercivity { msg, .. } => invalid(msg),
            Guard::Cfl { msg, .. } => Err(Error::Unstable(msg)),
        };
    }
    check_forcing_support(prob, space, time)?;

    let m = space.cells();
    let dx = space.dx();
    let dt = time.dt();
    let noise = driver.increments();
    let xs: Vec<f64> = (0..=m).map(|i| space.x(i)).collect();

    let mut values = Array2::<f64>::zeros((time.len(), m + 1));
    {
        let mut row0 = values.row_mut(0);
        for i in 1..m {
            row0[i] = (prob.ic)(xs[i]);
        }
        row0[0] = (prob.bc_lo)(0.0);
        row0[m] = (prob.bc_hi)(0.0);
    }

    let interior = m - 1;
    let mut rhs = vec![0.0; interior];
    let mut next = vec![0.0; interior];
    let mut scratch = vec![0.0; interior];
    let mut prev = vec![0.0; m + 1];

    for (n, &dw) in noise.iter().enumerate().take(time.steps()) {
        let t = time.time(n);
        let t_next = time.time(n + 1);
        prev.iter_mut()
            .zip(values.row(n).iter())
            .for_each(|(p, v)| *p = *v);
        let a = prob.a.at(n);
        let sigma = prob.sigma.at(n);
        let lam = 0.5 * a * dt / (dx * dx);
        let transport = sigma * dw / (2.0 * dx);

        for i in 1..m {
            let lap = prev[i + 1] - 2.0 * prev[i] + prev[i - 1];
            let mut r = prev[i] + 0.5 * lam * lap;
            if prob.f.is_some() {
                r += dt * prob.f_at(t, xs[i]);
            }
            r += transport * (prev[i + 1] - prev[i - 1]);
            if prob.g.is_some() {
                r += prob.g_at(t, xs[i]) * dw;
            }
            rhs[i - 1] = r;
        }
        let lo = (prob.bc_lo)(t_next);
        let hi = (prob.bc_hi)(t_next);
        rhs[0] += 0.5 * lam * lo;
        rhs[interior - 1] += 0.5 * lam * hi;

        solve_symmetric_tridiagonal(1.0 + lam, -0.5 * lam, &rhs, &mut next, &mut scratch);

        let mut row = values.row_mut(n + 1);
        row[0] = lo;
        row[m] = hi;
        for i in 1..m {
            row[i] = next[i - 1];
        }
    }

    Ok(FieldSolution {
        space: *space,
        time: *time,
        values,
        noise,
        seed: driver.seed(),
    })
}

/// Thomas algorithm for a constant symmetric tridiagonal matrix with
/// diagonal `diag` and off-diagonals `off`. `scratch` holds the modified
/// super-diagonal.
pub fn solve_symmetric_tridiagonal(
    diag: f64,
    off: f64,
    rhs: &[f64],
    x: &mut [f64],
    scratch: &mut [f64],
) {
    let n = rhs.len();
    debug_assert!(x.len() == n && scratch.len() == n && n > 0);
    let mut denom = diag;
    scratch[0] = off / denom;
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag - off * scratch[i - 1];
        scratch[i] = off / denom;
        x[i] = (rhs[i] - off * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= scratch[i] * x[i + 1];
    }
}

/// Running balance of the discrete positive-part energy identity
///
/// ```text
/// ‖u⁺_t‖² = ‖u⁺_0‖² + ∫ h ds + m_t,
/// h = -a (D u⁺, D u) + 2 (u⁺, f) + ‖(σ D u + g) 1_{u>0}‖²,
/// dm = 2 (u⁺, σ D u + g) dw,
/// ```
///
/// with the elliptic term in divergence form (forward differences) and the
/// noise pairing on centred differences.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyResidual {
    pub times: Vec<f64>,
    /// `‖u⁺_{t_n}‖² - ‖u⁺_0‖²`.
    pub lhs: Vec<f64>,
    /// Accumulated `Σ h dt + Σ dm` up to `t_n`.
    pub rhs: Vec<f64>,
    /// `lhs - rhs`.
    pub residual: Vec<f64>,
    pub initial_energy: f64,
}

impl EnergyResidual {
    /// `max |residual| / max(‖u⁺_0‖², max lhs magnitude)`.
    pub fn max_relative(&self) -> f64 {
        let scale = self
            .lhs
            .iter()
            .fold(self.initial_energy, |acc, v| acc.max(v.abs()));
        let worst = self.residual.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }
}

pub fn energy_residual(sol: &FieldSolution, prob: &SpdeProblem) -> Result<EnergyResidual> {
    if sol.noise.len() != sol.time.steps() {
        return Err(Error::GridMismatch(format!(
            "solution carries {} noise increments for {} steps",
            sol.noise.len(),
            sol.time.steps()
        )));
    }
    if let Some(msg) = prob
        .a
        .check_len(sol.time.len(), "a")
        .or_else(|| prob.sigma.check_len(sol.time.len(), "sigma"))
    {
        return Err(Error::GridMismatch(msg));
    }
    let (lo, hi) = prob.interval;
    if (sol.space.x_lo() - lo).abs() > 1e-12 || (sol.space.x_hi() - hi).abs() > 1e-12 {
        return Err(Error::GridMismatch(
            "solution and problem intervals differ".into(),
        ));
    }

    let space = sol.space;
    let dx = space.dx();
    let dt = sol.time.dt();
    let m = space.cells();
    let e0 = sol.positive_energy(0);

    let n_rows = sol.time.len();
    let mut times = Vec::with_capacity(n_rows);
    let mut lhs = Vec::with_capacity(n_rows);
    let mut rhs = Vec::with_capacity(n_rows);
    let mut residual = Vec::with_capacity(n_rows);
    let mut acc = 0.0;
    for n in 0..n_rows {
        let e = sol.positive_energy(n);
        times.push(sol.time.time(n));
        lhs.push(e - e0);
        rhs.push(acc);
        residual.push(e - e0 - acc);
        if n + 1 == n_rows {
            break;
        }

        let t = sol.time.time(n);
        let row = sol.row(n);
        let a = prob.a.at(n);
        let sigma = prob.sigma.at(n);
        let dw = sol.noise[n];

        let mut elliptic = 0.0;
        for i in 0..m {
            let du = (row[i + 1] - row[i]) / dx;
            let dup = (row[i + 1].max(0.0) - row[i].max(0.0)) / dx;
            elliptic += dup * du;
        }
        elliptic *= dx;

        let mut forcing = 0.0;
        let mut quad = 0.0;
        let mut pairing = 0.0;
        for i in 1..m {
            let x = space.x(i);
            let u = row[i];
            if u > 0.0 {
                let noise_coeff = sigma * (row[i + 1] - row[i - 1]) / (2.0 * dx) + prob.g_at(t, x);
                forcing += u * prob.f_at(t, x);
                quad += noise_coeff * noise_coeff;
                pairing += u * noise_coeff;
            }
        }
        let h = -a * elliptic + 2.0 * forcing * dx + quad * dx;
        acc += h * dt + 2.0 * pairing * dx * dw;
    }

    Ok(EnergyResidual {
        times,
        lhs,
        rhs,
        residual,
        initial_energy: e0,
    })
}

/// CSV `t,x,u` over every grid node.
pub fn write_field_csv<W: Write>(out: W, sol: &FieldSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "u"])?;
    for n in 0..sol.time.len() {
        let t = sol.time.time(n).to_string();
        for i in 0..sol.space.len() {
            w.write_record([
                t.as_str(),
                &sol.space.x(i).to_string(),
                &sol.at(n, i).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Magic bytes opening a binary field dump.
pub const FIELD_MAGIC: [u8; 4] = *b"SPDF";
/// dtype tag for little-endian `f64` payloads.
pub const DTYPE_F64_LE: u32 = 1;

/// Binary dump: 16-byte header (`magic`, `N`, `M`, dtype tag as little-endian
/// `u32`s) followed by the `(N + 1) × (M + 1)` values row-major as
/// little-endian `f64`.
pub fn write_field_binary<W: Write>(mut out: W, sol: &FieldSolution) -> Result<()> {
    let steps = u32::try_from(sol.time.steps())
        .map_err(|_| Error::InvalidInput("too many time steps for the binary header".into()))?;
    let cells = u32::try_from(sol.space.cells())
        .map_err(|_| Error::InvalidInput("too many cells for the binary header".into()))?;
    out.write_all(&FIELD_MAGIC)?;
    out.write_all(&steps.to_le_bytes())?;
    out.write_all(&cells.to_le_bytes())?;
    out.write_all(&DTYPE_F64_LE.to_le_bytes())?;
    for v in sol.values.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dump written by [`write_field_binary`]; returns `(N, M, values)`.
pub fn read_field_binary<R: Read>(mut input: R) -> Result<(usize, usize, Array2<f64>)> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if header[0..4] != FIELD_MAGIC {
        return invalid("not a field dump (bad magic)");
    }
    let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().unwrap());
    let (steps, cells, tag) = (word(4) as usize, word(8) as usize, word(12));
    if tag != DTYPE_F64_LE {
        return invalid(format!("unsupported dtype tag {tag}"));
    }
    let mut buf = vec![0u8; (steps + 1) * (cells + 1) * 8];
    input.read_exact(&mut buf)?;
    let data: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((steps + 1, cells + 1), data)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((steps, cells, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::simulate_wiener;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grids(dx_exp: i32, t: f64) -> (SpaceGrid, TimeGrid) {
        let space = SpaceGrid::new(0.0, 1.0, 1 << dx_exp).unwrap();
        let dx = space.dx();
        let steps = (t / (dx * dx / 2.0)).ceil() as usize;
        (space, TimeGrid::new(t, steps).unwrap())
    }

    #[test]
    fn tridiagonal_matches_dense_product() {
        let (d, o) = (2.5, -0.75);
        let rhs = [1.0, -2.0, 0.5, 3.0, 0.0];
        let mut x = [0.0; 5];
        let mut s = [0.0; 5];
        solve_symmetric_tridiagonal(d, o, &rhs, &mut x, &mut s);
        for i in 0..5 {
            let mut ax = d * x[i];
            if i > 0 {
                ax += o * x[i - 1];
            }
            if i < 4 {
                ax += o * x[i + 1];
            }
            assert_abs_diff_eq!(ax, rhs[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let (space, time) = grids(5, 0.05);
        let prob = SpdeProblem::new(0.0, 1.0).with_coefficients(1.0, 0.5);
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 3)).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
        let res = energy_residual(&sol, &prob).unwrap();
        assert!(res.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn boundary_rows_are_exact() {
        let (space, time) = grids(5, 0.05);
        let prob = SpdeProblem::new(0.0, 1.0)
            .with_coefficients(1.0, 0.4)
            .with_bc(|t| -t, |t| (3.0 * t).sin())
            .with_ic(|x| x * (1.0 - x));
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 9)).unwrap();
        for n in 0..time.len() {
            let t = time.time(n);
            assert_eq!(sol.at(n, 0), -t);
            assert_eq!(sol.at(n, space.cells()), (3.0 * t).sin());
        }
    }

    #[test]
    fn rejects_cfl_and_coercivity_violations() {
        let space = SpaceGrid::new(0.0, 1.0, 256).unwrap();
        let ok = TimeGrid::with_step(1.0, (2.0f64).powi(-18)).unwrap();
        let bad = TimeGrid::with_step(1.0, (2.0f64).powi(-10)).unwrap();
        let prob = SpdeProblem::new(0.0, 1.0);
        assert!(stability_check(&prob, &space, &ok).passed());
        let r = stability_check(&prob, &space, &bad);
        assert!(!r.passed());
        assert!(r.context.starts_with("cfl"), "{}", r.context);
        let w = simulate_wiener(bad, 1);
        assert!(matches!(
            solve_spde(&prob, &space, &bad, &w),
            Err(Error::Unstable(_))
        ));

        // a - σ² = 0.36 < δ1 a = 0.5
        let weak = SpdeProblem::new(0.0, 1.0)
            .with_coefficients(1.0, 0.8)
            .with_coercivity(0.3, 0.5);
        let r = stability_check(&weak, &space, &ok);
        assert!(!r.passed());
        assert!(r.context.starts_with("coercivity"), "{}", r.context);
    }

    #[test]
    fn tight_coercivity_is_admissible() {
        let prob = SpdeProblem::new(0.0, 1.0).with_coefficients(
            Coefficient::Series(vec![1.0, 1.5, 0.8]),
            Coefficient::Series(vec![0.5, 0.2, 0.1]),
        );
        let space = SpaceGrid::new(0.0, 1.0, 4).unwrap();
        let time = TimeGrid::new(0.001, 2).unwrap();
        assert!(stability_check(&prob, &space, &time).passed());
    }

    #[test]
    fn driver_grid_must_match() {
        let (space, time) = grids(4, 0.01);
        let other = TimeGrid::new(0.01, time.steps() + 1).unwrap();
        let prob = SpdeProblem::new(0.0, 1.0);
        assert!(matches!(
            solve_spde(&prob, &space, &time, &simulate_wiener(other, 1)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn compact_forcing_is_enforced() {
        let space = SpaceGrid::new(0.0, 2.0, 16).unwrap();
        let time = TimeGrid::new(0.001, 4).unwrap();
        let prob = SpdeProblem::new(0.0, 2.0)
            .with_f(|_, x| x)
            .with_compact_forcing(true);
        assert!(solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).is_err());
    }

    #[test]
    fn eigenmode_decay() {
        let (space, time) = grids(6, 0.1);
        let prob = SpdeProblem::new(0.0, 1.0).with_ic(|x| (PI * x).sin());
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        let mid = space.index_of(0.5).unwrap();
        let exact = (-PI * PI * 0.1 / 2.0).exp();
        assert!((sol.at(time.steps(), mid) - exact).abs() / exact < 2e-3);
    }

    #[test]
    fn binary_dump_round_trip() {
        let (space, time) = grids(3, 0.01);
        let sol = FieldSolution::from_fn(space, time, |t, x| t + 10.0 * x);
        let mut buf = Vec::new();
        write_field_binary(&mut buf, &sol).unwrap();
        assert_eq!(&buf[0..4], b"SPDF");
        assert_eq!(buf.len(), 16 + 8 * time.len() * space.len());
        let (n, m, values) = read_field_binary(buf.as_slice()).unwrap();
        assert_eq!((n, m), (time.steps(), space.cells()));
        assert_eq!(values, sol.values);
    }

    #[test]
    fn field_csv_header_and_rows() {
        let space = SpaceGrid::new(0.0, 1.0, 2).unwrap();
        let time = TimeGrid::new(1.0, 1).unwrap();
        let sol = FieldSolution::from_fn(space, time, |t, x| t * x);
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &sol).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,x,u"));
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().last(), Some("1,1,1"));
    }
}
