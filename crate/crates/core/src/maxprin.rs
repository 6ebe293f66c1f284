//! Discrete verifiers for the sign, comparison, barrier and envelope
//! statements, plus pointwise checks of the coefficient assumptions of the
//! general divergence-form equation.
//!
//! Hypotheses are re-derived from the problem data on the grid instead of
//! being taken on trust. Indicator sets such as `{u > ρū}` use strict
//! inequality, so ties impose nothing.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::report::Report;
use crate::spde_fd::{FieldSolution, SpaceGrid, SpdeProblem};

const SCALE_GUARD: f64 = 1e-300;

/// `max|ic| + T · max|f| + 1e-300`, with data sampled on the grids.
pub fn problem_scale(prob: &SpdeProblem, space: &SpaceGrid, time: &crate::paths::TimeGrid) -> f64 {
    let ic = (0..space.len())
        .map(|i| (prob.ic)(space.x(i)).abs())
        .fold(0.0, f64::max);
    let f = if prob.f.is_some() {
        let mut m = 0.0f64;
        for n in 0..time.len() {
            let t = time.time(n);
            for i in 0..space.len() {
                m = m.max(prob.f_at(t, space.x(i)).abs());
            }
        }
        m
    } else {
        0.0
    };
    ic + time.horizon() * f + SCALE_GUARD
}

fn hypothesis<T>(msg: String) -> Result<T> {
    Err(Error::Hypothesis(msg))
}

/// Largest positive part over the grid, with its `(n, i)`.
fn worst_positive(
    values: impl Iterator<Item = ((usize, usize), f64)>,
) -> (f64, Option<(usize, usize)>) {
    let mut best = (0.0, None);
    for (idx, v) in values {
        if v > best.0 || (v.is_nan() && !best.0.is_nan()) {
            best = (v, Some(idx));
        }
    }
    best
}

/// Checks `u <= 0` on the grid, relative to [`problem_scale`].
///
/// The producing problem must satisfy `ic <= 0`, `bc <= 0`, and on
/// `{u > 0}` also `f <= 0`, `g = 0`; otherwise a hypothesis error is
/// returned.
pub fn verify_sign(sol: &FieldSolution, prob: &SpdeProblem, tol: f64) -> Result<Report> {
    let (space, time) = (&sol.space, &sol.time);
    for i in 1..space.cells() {
        let x = space.x(i);
        let v = (prob.ic)(x);
        if v > 0.0 {
            return hypothesis(format!("initial value {v} > 0 at x = {x}"));
        }
    }
    for n in 0..time.len() {
        let t = time.time(n);
        let (lo, hi) = ((prob.bc_lo)(t), (prob.bc_hi)(t));
        if lo > 0.0 || hi > 0.0 {
            return hypothesis(format!(
                "boundary data ({lo}, {hi}) not nonpositive at t = {t}"
            ));
        }
        for i in 0..space.len() {
            if sol.at(n, i) > 0.0 {
                let x = space.x(i);
                let (f, g) = (prob.f_at(t, x), prob.g_at(t, x));
                if f > 0.0 || g != 0.0 {
                    return hypothesis(format!(
                        "on {{u > 0}} at (t, x) = ({t}, {x}): f = {f}, g = {g}"
                    ));
                }
            }
        }
    }
    let scale = problem_scale(prob, space, time);
    let (worst, at) = worst_positive(sol.values.indexed_iter().map(|(idx, &v)| (idx, v)));
    let failed = sol.values.iter().filter(|&&v| v / scale > tol).count();
    let mut report = Report::new("sign", worst / scale, tol)
        .with_counts(sol.values.len(), failed)
        .with_context(format!("scale={scale:e}"));
    if let Some((n, i)) = at {
        report = report.at(time.time(n), space.x(i));
    }
    Ok(report)
}

fn check_rho(rho: &[f64], len: usize) -> Result<()> {
    if rho.len() != len {
        return Err(Error::GridMismatch(format!(
            "ρ has {} samples, time grid has {len} points",
            rho.len()
        )));
    }
    if let Some(r) = rho.iter().find(|r| !(**r >= 0.0)) {
        return invalid(format!("ρ must be nonnegative, found {r}"));
    }
    if rho.windows(2).any(|w| w[1] < w[0]) {
        return invalid("ρ must be nondecreasing");
    }
    Ok(())
}

fn same_coefficients(p: &SpdeProblem, q: &SpdeProblem, len: usize) -> bool {
    (0..len).all(|n| p.a.at(n) == q.a.at(n) && p.sigma.at(n) == q.sigma.at(n))
}

/// Checks `u <= ρ ū` on the grid.
///
/// Both fields must share grids and driving noise and come from problems
/// with the same coefficients. Hypotheses, evaluated on the grid:
/// `u <= ρū` at `t = 0` and on both boundary columns; on `{u > ρū}`,
/// `g = ρḡ`, `f <= ρf̄`, and `ū >= 0` at steps where `ρ` rises. The scale is
/// `problem_scale(u) + max ρ · problem_scale(ū)`.
pub fn verify_comparison(
    u: &FieldSolution,
    u_prob: &SpdeProblem,
    u_bar: &FieldSolution,
    u_bar_prob: &SpdeProblem,
    rho: &[f64],
    tol: f64,
) -> Result<Report> {
    if !u.same_setting(u_bar) {
        return Err(Error::GridMismatch(
            "fields do not share grids and noise".into(),
        ));
    }
    let (space, time) = (&u.space, &u.time);
    check_rho(rho, time.len())?;
    if !same_coefficients(u_prob, u_bar_prob, time.len()) {
        return invalid("problems have different coefficients a, σ");
    }
    let m = space.cells();
    for n in 0..time.len() {
        let t = time.time(n);
        let r = rho[n];
        let parabolic_boundary: Vec<usize> = if n == 0 {
            (0..=m).collect()
        } else {
            vec![0, m]
        };
        for i in parabolic_boundary {
            if u.at(n, i) > r * u_bar.at(n, i) {
                return hypothesis(format!(
                    "u > ρū on the parabolic boundary at (t, x) = ({t}, {})",
                    space.x(i)
                ));
            }
        }
        // ū enters through ū dρ, so its sign only matters where ρ moves
        let rising = (n > 0 && rho[n] > rho[n - 1]) || (n + 1 < rho.len() && rho[n + 1] > r);
        for i in 1..m {
            let (v, vb) = (u.at(n, i), u_bar.at(n, i));
            if v > r * vb {
                let x = space.x(i);
                let dg = u_prob.g_at(t, x) - r * u_bar_prob.g_at(t, x);
                let df = u_prob.f_at(t, x) - r * u_bar_prob.f_at(t, x);
                if dg != 0.0 || df > 0.0 || (rising && vb < 0.0) {
                    return hypothesis(format!(
                        "on {{u > ρū}} at (t, x) = ({t}, {x}): g - ρḡ = {dg}, f - ρf̄ = {df}, ū = {vb}"
                    ));
                }
            }
        }
    }
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    let scale =
        problem_scale(u_prob, space, time) + rho_max * problem_scale(u_bar_prob, space, time);
    let excess = |(n, i): (usize, usize)| u.at(n, i) - rho[n] * u_bar.at(n, i);
    let (worst, at) = worst_positive(u.values.indexed_iter().map(|(idx, _)| (idx, excess(idx))));
    let failed = u
        .values
        .indexed_iter()
        .filter(|(idx, _)| excess(*idx) / scale > tol)
        .count();
    let mut report = Report::new("comparison", worst / scale, tol)
        .with_counts(u.values.len(), failed)
        .with_context(format!("scale={scale:e}"));
    if let Some((n, i)) = at {
        report = report.at(time.time(n), space.x(i));
    }
    Ok(report)
}

/// The constant barrier `ū ≡ 1` on `u`'s grids, with `u`'s noise.
pub fn unit_barrier(u: &FieldSolution) -> FieldSolution {
    let mut out = FieldSolution::from_fn(u.space, u.time, |_, _| 1.0);
    out.noise = u.noise.clone();
    out.seed = u.seed;
    out
}

/// Checks `u <= 1` through [`verify_comparison`] against the unit barrier
/// with `ρ ≡ 1`; the barrier problem shares `u_prob`'s coefficients and has
/// unit initial and boundary data.
pub fn verify_barrier(u: &FieldSolution, u_prob: &SpdeProblem, tol: f64) -> Result<Report> {
    let bar = unit_barrier(u);
    let bar_prob = SpdeProblem::new(u_prob.interval.0, u_prob.interval.1)
        .with_coefficients(u_prob.a.clone(), u_prob.sigma.clone())
        .with_ic(|_| 1.0)
        .with_bc(|_| 1.0, |_| 1.0);
    let rho = vec![1.0; u.time.len()];
    let mut r = verify_comparison(u, u_prob, &bar, &bar_prob, &rho, tol)?;
    r.name = "barrier".into();
    Ok(r)
}

/// Problem for the auxiliary solution `v_m` on `(0, 2^{-m/2})`:
/// zero initial data, `v = 0` at `x = 0`, `v = 1` at the outer edge, no
/// forcing, coefficients of `prob`.
pub fn envelope_problem(prob: &SpdeProblem, m: u32) -> SpdeProblem {
    let width = crate::auxiliary::strip_width(m);
    let mut out = SpdeProblem::new(0.0, width)
        .with_coefficients(prob.a.clone(), prob.sigma.clone())
        .with_coercivity(prob.delta0, prob.delta1)
        .with_bc(|_| 0.0, |_| 1.0);
    out.ic = Arc::new(|_| 0.0);
    out
}

/// Checks `|u(t,x)| <= v_m(t,x) · sup_{s<=t} |u(s, 2^{-m/2})| + tol · sup|u|`
/// at every grid point with `x < 2^{-m/2}`.
///
/// `v_m` must be driven by the same noise on the same time grid, with the
/// same `dx` and nodes aligned with `u`'s. The data of `u_prob` must vanish
/// for `x <= 2^{-m/2}`.
pub fn verify_envelope(
    u: &FieldSolution,
    u_prob: &SpdeProblem,
    v: &FieldSolution,
    m: u32,
    tol: f64,
) -> Result<Report> {
    if u.time != v.time || u.noise != v.noise {
        return Err(Error::GridMismatch(
            "u and v_m do not share time grid and noise".into(),
        ));
    }
    let width = crate::auxiliary::strip_width(m);
    let (space, time) = (&u.space, &u.time);
    let Some(edge) = space.index_of(width) else {
        return Err(Error::GridMismatch(format!(
            "x = {width} is not a node of u's grid"
        )));
    };
    let dx_match = (v.space.dx() - space.dx()).abs() <= 1e-12 * space.dx();
    if !dx_match
        || v.space.x_lo() != space.x_lo()
        || v.space.index_of(width) != Some(v.space.cells())
    {
        return Err(Error::GridMismatch(
            "v_m must live on [x_lo, 2^{-m/2}] with u's spacing".into(),
        ));
    }
    for n in 0..time.len() {
        let t = time.time(n);
        for i in 0..=edge {
            let x = space.x(i);
            if u_prob.f_at(t, x) != 0.0 || u_prob.g_at(t, x) != 0.0 {
                return hypothesis(format!("forcing does not vanish at (t, x) = ({t}, {x})"));
            }
        }
    }
    let scale = u.values.iter().fold(0.0f64, |a, v| a.max(v.abs())) + SCALE_GUARD;
    let mut running = 0.0f64;
    let mut worst = 0.0f64;
    let mut at = None;
    let (mut checked, mut failed) = (0usize, 0usize);
    for n in 0..time.len() {
        running = running.max(u.at(n, edge).abs());
        for i in 0..edge {
            let excess = (u.at(n, i).abs() - v.at(n, i) * running) / scale;
            checked += 1;
            if excess > tol {
                failed += 1;
            }
            if excess > worst {
                worst = excess;
                at = Some((time.time(n), space.x(i)));
            }
        }
    }
    let mut report = Report::new(format!("envelope_m{m}"), worst, tol)
        .with_counts(checked, failed)
        .with_context(format!("scale={scale:e}"));
    if let Some((t, x)) = at {
        report = report.at(t, x);
    }
    Ok(report)
}

/// Coefficients of the general equation at one space-time point, for a
/// `d`-dimensional domain and `k` noise components.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCoefficients {
    /// `a^{ij}`, row-major `d × d`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// First-order coefficients `a^i` of the divergence part.
    pub a_div: Vec<f64>,
    pub c: f64,
    /// `σ^{ik}`, row-major `d × k`.
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PointCoefficients {
    /// Zero lower-order terms, `a = identity`, `σ = 0`.
    pub fn identity(dim: usize, noise_dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self {
            a,
            b: vec![0.0; dim],
            a_div: vec![0.0; dim],
            c: 0.0,
            sigma: vec![0.0; dim * noise_dim],
            nu: vec![0.0; noise_dim],
            xi: vec![0.0; dim],
        }
    }

    /// `α^{ij} = Σ_k σ^{ik} σ^{jk}`.
    pub fn alpha(&self, dim: usize) -> Vec<f64> {
        let k = self.nu.len();
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = (0..k)
                    .map(|r| self.sigma[i * k + r] * self.sigma[j * k + r])
                    .sum();
            }
        }
        out
    }

    /// `η^i = a^i - b^i - (σ^i, ν) - ξ^i`.
    pub fn eta(&self, dim: usize) -> Vec<f64> {
        let k = self.nu.len();
        (0..dim)
            .map(|i| {
                let s_nu: f64 = (0..k).map(|r| self.sigma[i * k + r] * self.nu[r]).sum();
                self.a_div[i] - self.b[i] - s_nu - self.xi[i]
            })
            .collect()
    }
}

/// Uniform tensor grid in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

impl TensorGrid {
    pub fn new(shape: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() != spacing.len() || shape.len() != origin.len() {
            return Err(Error::GridMismatch(
                "shape, spacing and origin dimensions differ".into(),
            ));
        }
        if shape.iter().any(|&s| s < 2) || spacing.iter().any(|h| !(*h > 0.0)) {
            return invalid("need at least two points and positive spacing per axis");
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat (row-major) index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.shape[axis];
            flat /= self.shape[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.origin[axis] + i as f64 * self.spacing[axis])
            .collect()
    }
}

/// Coefficient fields on `times × grid` with the bounds `K₁(t) > 0`,
/// `K₂(t) >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    pub grid: TensorGrid,
    pub noise_dim: usize,
    pub times: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// `values[n][p]` at time `times[n]` and flat grid index `p`.
    pub values: Vec<Vec<PointCoefficients>>,
}

impl CoefficientFields {
    pub fn from_fn(
        grid: TensorGrid,
        noise_dim: usize,
        times: Vec<f64>,
        k1: impl Fn(f64) -> f64,
        k2: impl Fn(f64) -> f64,
        coeffs: impl Fn(f64, &[f64]) -> PointCoefficients,
    ) -> Result<Self> {
        let values = times
            .iter()
            .map(|&t| (0..grid.len()).map(|p| coeffs(t, &grid.point(p))).collect())
            .collect();
        let out = Self {
            k1: times.iter().map(|&t| k1(t)).collect(),
            k2: times.iter().map(|&t| k2(t)).collect(),
            grid,
            noise_dim,
            times,
            values,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.grid.dim(), self.noise_dim);
        let nt = self.times.len();
        if nt == 0 || self.k1.len() != nt || self.k2.len() != nt || self.values.len() != nt {
            return Err(Error::GridMismatch(
                "time samples of fields and bounds differ".into(),
            ));
        }
        if self.k1.iter().any(|v| !(*v > 0.0)) || self.k2.iter().any(|v| !(*v >= 0.0)) {
            return invalid("need K₁ > 0 and K₂ >= 0");
        }
        for slice in &self.values {
            if slice.len() != self.grid.len() {
                return Err(Error::GridMismatch(
                    "slice size differs from the grid".into(),
                ));
            }
            for pc in slice {
                let ok = pc.a.len() == d * d
                    && pc.b.len() == d
                    && pc.a_div.len() == d
                    && pc.sigma.len() == d * k
                    && pc.nu.len() == k
                    && pc.xi.len() == d;
                if !ok {
                    return Err(Error::GridMismatch(format!(
                        "point coefficients do not match dimension {d} with {k} noise components"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Centred divergence `Σ_i D_i η^i` at flat index `p`, one-sided on edges.
fn divergence_eta(cf: &CoefficientFields, p: usize, eta: &[Vec<f64>]) -> f64 {
    let grid = &cf.grid;
    let idx = grid.multi_index(p);
    let mut div = 0.0;
    for axis in 0..grid.dim() {
        let (i, len, h) = (idx[axis], grid.shape[axis], grid.spacing[axis]);
        let mut lo = idx.clone();
        let mut hi = idx.clone();
        let span = if i == 0 {
            hi[axis] = 1;
            h
        } else if i == len - 1 {
            lo[axis] = len - 2;
            h
        } else {
            lo[axis] = i - 1;
            hi[axis] = i + 1;
            2.0 * h
        };
        div += (eta[grid.flat_index(&hi)][axis] - eta[grid.flat_index(&lo)][axis]) / span;
    }
    div
}

/// Pointwise check of
///
/// ```text
/// |Σ λ^i ξ^i|² <= K₁ (2a^{ij} - α^{ij}) λ^i λ^j   for each sampled λ,
/// D_i η^i - 2c + |ν|² <= K₂.
/// ```
///
/// The report's violation is the largest amount by which either side is
/// exceeded, relative to `1 + |right side|`; the tolerance is `1e-10` to
/// absorb rounding in exact cases.
pub fn check_assumptions(cf: &CoefficientFields, lambdas: &[Vec<f64>]) -> Result<Report> {
    cf.validate()?;
    let d = cf.grid.dim();
    if lambdas.is_empty() {
        return invalid("no direction samples");
    }
    for l in lambdas {
        if l.len() != d {
            return Err(Error::GridMismatch(format!(
                "direction of length {} for a {d}-dimensional grid",
                l.len()
            )));
        }
        if l.iter().all(|v| *v == 0.0) {
            return invalid("direction samples must be nonzero");
        }
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = None;
    let mut which = "";
    let mut parab_margin = f64::INFINITY;
    let mut div_margin = f64::INFINITY;
    let mut failed = 0usize;
    let mut checked = 0usize;
    for (n, slice) in cf.values.iter().enumerate() {
        let (k1, k2) = (cf.k1[n], cf.k2[n]);
        let eta: Vec<Vec<f64>> = slice.iter().map(|pc| pc.eta(d)).collect();
        for (p, pc) in slice.iter().enumerate() {
            let alpha = pc.alpha(d);
            for l in lambdas {
                let lx: f64 = l.iter().zip(&pc.xi).map(|(a, b)| a * b).sum();
                let mut quad = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        quad += (2.0 * pc.a[i * d + j] - alpha[i * d + j]) * l[i] * l[j];
                    }
                }
                let rhs = k1 * quad;
                let margin = rhs - lx * lx;
                parab_margin = parab_margin.min(margin);
                let rel = -margin / (1.0 + rhs.abs());
                checked += 1;
                if rel > 1e-10 {
                    failed += 1;
                }
                if rel > worst {
                    worst = rel;
                    worst_at = Some((n, p));
                    which = "parabolicity";
                }
            }
            let nu2: f64 = pc.nu.iter().map(|v| v * v).sum();
            let lhs = divergence_eta(cf, p, &eta) - 2.0 * pc.c + nu2;
            let margin = k2 - lhs;
            div_margin = div_margin.min(margin);
            let rel = -margin / (1.0 + k2.abs());
            checked += 1;
            if rel > 1e-10 {
                failed += 1;
            }
            if rel > worst {
                worst = rel;
                worst_at = Some((n, p));
                which = "divergence";
            }
        }
    }
    let mut report = Report::new("assumptions", worst.max(0.0), 1e-10)
        .with_counts(checked, failed)
        .with_context(format!(
            "worst={which} parabolicity_margin={parab_margin:e} divergence_margin={div_margin:e}"
        ));
    if let Some((n, p)) = worst_at {
        report = report.at(cf.times[n], cf.grid.point(p)[0]);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{simulate_wiener, TimeGrid};
    use crate::spde_fd::solve_spde;
    use std::f64::consts::PI;

    fn setting(cells: usize, steps: usize) -> (SpaceGrid, TimeGrid) {
        (
            SpaceGrid::new(0.0, 1.0, cells).unwrap(),
            TimeGrid::new(0.1, steps).unwrap(),
        )
    }

    #[test]
    fn zero_problem_passes_sign() {
        let (space, time) = setting(16, 100);
        let prob = SpdeProblem::new(0.0, 1.0);
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        let r = verify_sign(&sol, &prob, 1e-3).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_violation, 0.0);
        assert!(r.location.is_none());
    }

    #[test]
    fn positive_initial_data_is_rejected() {
        let (space, time) = setting(16, 100);
        let prob = SpdeProblem::new(0.0, 1.0).with_ic(|x| (PI * x).sin());
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        assert!(matches!(
            verify_sign(&sol, &prob, 1e-3),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn deterministic_sign_is_exact() {
        let (space, time) = setting(64, 1000);
        let prob = SpdeProblem::new(0.0, 1.0)
            .with_ic(|x| -(PI * x).sin())
            .with_f(|_, x| -x * (1.0 - x));
        let sol = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        let r = verify_sign(&sol, &prob, 0.0).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn comparison_with_itself_and_doubled() {
        let (space, time) = setting(32, 400);
        let prob = SpdeProblem::new(0.0, 1.0)
            .with_coefficients(1.0, 0.5)
            .with_ic(|x| (PI * x).sin());
        let w = simulate_wiener(time, 3);
        let u = solve_spde(&prob, &space, &time, &w).unwrap();
        let ones = vec![1.0; time.len()];
        let r = verify_comparison(&u, &prob, &u, &prob, &ones, 0.0).unwrap();
        assert_eq!(r.max_violation, 0.0);

        let doubled = prob.scaled(2.0);
        let u2 = solve_spde(&doubled, &space, &time, &w).unwrap();
        let twos = vec![2.0; time.len()];
        let r = verify_comparison(&u2, &doubled, &u, &prob, &twos, 0.0).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn comparison_rejects_bad_rho_and_setting() {
        let (space, time) = setting(16, 100);
        let prob = SpdeProblem::new(0.0, 1.0);
        let u = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        let v = solve_spde(&prob, &space, &time, &simulate_wiener(time, 2)).unwrap();
        let ones = vec![1.0; time.len()];
        assert!(verify_comparison(&u, &prob, &v, &prob, &ones, 0.0).is_err());
        let mut down = ones.clone();
        down[5] = 0.5;
        assert!(verify_comparison(&u, &prob, &u, &prob, &down, 0.0).is_err());
        assert!(verify_comparison(&u, &prob, &u, &prob, &ones[1..], 0.0).is_err());
    }

    #[test]
    fn deterministic_barrier_is_exact() {
        let (space, time) = setting(32, 400);
        let prob = SpdeProblem::new(0.0, 1.0).with_ic(|x| 4.0 * x * (1.0 - x));
        let u = solve_spde(&prob, &space, &time, &simulate_wiener(time, 1)).unwrap();
        let r = verify_barrier(&u, &prob, 0.0).unwrap();
        assert_eq!(r.max_violation, 0.0);
        let bad = SpdeProblem::new(0.0, 1.0).with_ic(|_| 2.0);
        let u = solve_spde(&bad, &space, &time, &simulate_wiener(time, 1)).unwrap();
        assert!(verify_barrier(&u, &bad, 0.0).is_err());
    }

    #[test]
    fn deterministic_envelope_holds() {
        let m = 2;
        let space = SpaceGrid::new(0.0, 1.0, 64).unwrap();
        let time = TimeGrid::new(0.2, 2000).unwrap();
        let prob = SpdeProblem::new(0.0, 1.0)
            .with_f(|_, x| {
                if x > 0.5 {
                    (2.0 * PI * x).sin().abs()
                } else {
                    0.0
                }
            })
            .with_ic(|x| if x > 0.5 { -(2.0 * PI * x).sin() } else { 0.0 });
        let w = simulate_wiener(time, 1);
        let u = solve_spde(&prob, &space, &time, &w).unwrap();
        let vp = envelope_problem(&prob, m);
        let vspace = SpaceGrid::with_spacing(0.0, 0.5, space.dx()).unwrap();
        let v = solve_spde(&vp, &vspace, &time, &w).unwrap();
        let r = verify_envelope(&u, &prob, &v, m, 1e-3).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.pass_fraction(), 1.0);
    }

    #[test]
    fn envelope_rejects_forcing_near_boundary() {
        let m = 2;
        let space = SpaceGrid::new(0.0, 1.0, 16).unwrap();
        let time = TimeGrid::new(0.1, 100).unwrap();
        let prob = SpdeProblem::new(0.0, 1.0).with_f(|_, _| 1.0);
        let w = simulate_wiener(time, 1);
        let u = solve_spde(&prob, &space, &time, &w).unwrap();
        let vspace = SpaceGrid::with_spacing(0.0, 0.5, space.dx()).unwrap();
        let v = solve_spde(&envelope_problem(&prob, m), &vspace, &time, &w).unwrap();
        assert!(matches!(
            verify_envelope(&u, &prob, &v, m, 1e-3),
            Err(Error::Hypothesis(_))
        ));
    }

    fn line_grid() -> TensorGrid {
        TensorGrid::new(vec![11], vec![0.1], vec![0.0]).unwrap()
    }

    #[test]
    fn identity_coefficients_satisfy_assumptions() {
        let grid = TensorGrid::new(vec![5, 4], vec![0.25, 0.5], vec![0.0, 0.0]).unwrap();
        let cf = CoefficientFields::from_fn(
            grid,
            1,
            vec![0.0, 1.0],
            |_| 1e-3,
            |_| 0.0,
            |_, _| PointCoefficients::identity(2, 1),
        )
        .unwrap();
        let r = check_assumptions(&cf, &[vec![1.0, 0.0], vec![0.3, -2.0]]).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn scalar_parabolicity_example() {
        let cf = CoefficientFields::from_fn(
            line_grid(),
            1,
            vec![0.0],
            |_| 1.0,
            |_| 0.0,
            |_, _| {
                let mut pc = PointCoefficients::identity(1, 1);
                pc.sigma = vec![1.2];
                pc
            },
        )
        .unwrap();
        assert!(check_assumptions(&cf, &[vec![1.0]]).unwrap().passed());
        let cf = CoefficientFields::from_fn(
            line_grid(),
            1,
            vec![0.0],
            |_| 1.0,
            |_| 0.0,
            |_, _| {
                let mut pc = PointCoefficients::identity(1, 1);
                pc.sigma = vec![1.5];
                pc
            },
        )
        .unwrap();
        assert!(!check_assumptions(&cf, &[vec![1.0]]).unwrap().passed());
    }

    #[test]
    fn linear_eta_slope_against_k2() {
        for (slope, k2, ok) in [(0.5, 1.0, true), (1.0, 1.0, true), (1.5, 1.0, false)] {
            let cf = CoefficientFields::from_fn(
                line_grid(),
                1,
                vec![0.0],
                |_| 1.0,
                move |_| k2,
                |_, x| {
                    let mut pc = PointCoefficients::identity(1, 1);
                    pc.a_div = vec![slope * x[0]];
                    pc
                },
            )
            .unwrap();
            assert_eq!(
                check_assumptions(&cf, &[vec![1.0]]).unwrap().passed(),
                ok,
                "slope {slope}"
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cf = CoefficientFields::from_fn(
            line_grid(),
            1,
            vec![0.0],
            |_| 1.0,
            |_| 0.0,
            |_, _| PointCoefficients::identity(1, 1),
        )
        .unwrap();
        assert!(check_assumptions(&cf, &[vec![1.0, 0.0]]).is_err());
        assert!(check_assumptions(&cf, &[vec![0.0]]).is_err());
        let bad = CoefficientFields::from_fn(
            line_grid(),
            2,
            vec![0.0],
            |_| 1.0,
            |_| 0.0,
            |_, _| PointCoefficients::identity(1, 1),
        );
        assert!(bad.is_err());
    }
}
