//! Boundary-weighted Sobolev norms
//!
//! ```text
//! ‖v‖^p_{L_{p,θ}(τ)} = E ∫₀^τ ∫ x^{θ-1} |v(t,x)|^p dx dt,
//! ‖v‖_{H¹_{p,θ}} = ‖v‖_{L_{p,θ}} + ‖M D_x v‖_{L_{p,θ}},
//! ‖v‖_{H²_{p,θ}} = ‖v‖_{H¹_{p,θ}} + ‖M² D²_x v‖_{L_{p,θ}},
//! ```
//!
//! with `M` multiplication by `x`, plus the exponents that govern boundary
//! decay, a power-law fit for it, and the localising times `τₙ`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::paths::TimeGrid;
use crate::spde_fd::FieldSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L,
    H1,
    H2,
}

impl NormOrder {
    pub fn from_index(order: u8) -> Result<Self> {
        match order {
            0 => Ok(NormOrder::L),
            1 => Ok(NormOrder::H1),
            2 => Ok(NormOrder::H2),
            _ => invalid(format!("norm order must be 0, 1 or 2, got {order}")),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            NormOrder::L => 0,
            NormOrder::H1 => 1,
            NormOrder::H2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub p: f64,
    pub theta: f64,
    pub order: NormOrder,
    /// Upper time limit; `None` integrates over the whole grid.
    pub horizon: Option<f64>,
    /// Apply the norm to `x^k v` for `k ∈ {-1, 0, 1}`.
    pub weight_power: i32,
}

impl NormParams {
    pub fn new(p: f64, theta: f64, order: NormOrder) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return invalid(format!("p must be at least 2, got {p}"));
        }
        if !(theta > 0.0 && theta < p) {
            return invalid(format!("θ must lie in (0, p) = (0, {p}), got {theta}"));
        }
        Ok(Self {
            p,
            theta,
            order,
            horizon: None,
            weight_power: 0,
        })
    }

    pub fn with_horizon(mut self, tau: f64) -> Self {
        self.horizon = Some(tau);
        self
    }

    pub fn with_weight_power(mut self, k: i32) -> Result<Self> {
        if !(-1..=1).contains(&k) {
            return invalid(format!("weight power must be -1, 0 or 1, got {k}"));
        }
        self.weight_power = k;
        Ok(self)
    }
}

/// `x^k v` at the nodes. At `x = 0` with `k = -1` the one-sided slope is
/// used, the limit of `v / x` for a field vanishing there.
fn premultiplied(row: &[f64], xs: &[f64], k: i32, dx: f64) -> Vec<f64> {
    match k {
        0 => row.to_vec(),
        1 => row.iter().zip(xs).map(|(v, x)| v * x).collect(),
        _ => row
            .iter()
            .zip(xs)
            .enumerate()
            .map(|(i, (v, x))| {
                if *x > 0.0 {
                    v / x
                } else if i + 1 < row.len() {
                    (row[i + 1] - row[i]) / dx
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// `∫ x^{θ-1} |·|^p dx` for the three terms (value, `M D v`, `M² D² v`) at
/// one time row, midpoint rule on cell centres.
fn spatial_terms(w: &[f64], xs: &[f64], dx: f64, p: f64, theta: f64, order: NormOrder) -> [f64; 3] {
    let cells = w.len() - 1;
    let second = |i: usize| {
        let i = i.clamp(1, cells - 1);
        (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (dx * dx)
    };
    let mut out = [0.0; 3];
    for c in 0..cells {
        let x = 0.5 * (xs[c] + xs[c + 1]);
        let weight = x.powf(theta - 1.0) * dx;
        let v = 0.5 * (w[c] + w[c + 1]);
        out[0] += weight * v.abs().powf(p);
        if order != NormOrder::L {
            let d1 = (w[c + 1] - w[c]) / dx;
            out[1] += weight * (x * d1).abs().powf(p);
        }
        if order == NormOrder::H2 {
            let d2 = 0.5 * (second(c) + second(c + 1));
            out[2] += weight * (x * x * d2).abs().powf(p);
        }
    }
    out
}

/// `∫₀^τ S dt` for samples `S` on `grid`, trapezoid with a linearly
/// interpolated last partial step.
fn time_integral(s: &[[f64; 3]], grid: &TimeGrid, tau: f64) -> [f64; 3] {
    let dt = grid.dt();
    let mut out = [0.0; 3];
    let tau = tau.clamp(0.0, grid.horizon());
    let full = ((tau / dt) * (1.0 + 1e-12)).floor() as usize;
    let full = full.min(grid.steps());
    for n in 0..full {
        for k in 0..3 {
            out[k] += 0.5 * dt * (s[n][k] + s[n + 1][k]);
        }
    }
    let rest = tau - grid.time(full);
    if full < grid.steps() && rest > 1e-12 * dt {
        let w = rest / dt;
        for k in 0..3 {
            let end = s[full][k] + w * (s[full + 1][k] - s[full][k]);
            out[k] += 0.5 * rest * (s[full][k] + end);
        }
    }
    out
}

/// The three `p`-th powers `E ∫∫ x^{θ-1}|·|^p` for one member up to `tau`.
fn member_terms(field: &FieldSolution, params: &NormParams, tau: f64) -> [f64; 3] {
    let xs: Vec<f64> = (0..field.space.len()).map(|i| field.space.x(i)).collect();
    let dx = field.space.dx();
    let rows: Vec<[f64; 3]> = (0..field.time.len())
        .map(|n| {
            let row = field.row(n).to_vec();
            let w = premultiplied(&row, &xs, params.weight_power, dx);
            spatial_terms(&w, &xs, dx, params.p, params.theta, params.order)
        })
        .collect();
    time_integral(&rows, &field.time, tau)
}

fn check_ensemble(ensemble: &[FieldSolution]) -> Result<()> {
    let Some(first) = ensemble.first() else {
        return invalid("empty ensemble");
    };
    if first.space.x_lo() < 0.0 {
        return invalid("weighted norms need fields on x >= 0");
    }
    if first.space.cells() < 2 {
        return invalid("need at least two cells");
    }
    if ensemble
        .iter()
        .any(|f| f.space != first.space || f.time != first.time)
    {
        return Err(Error::GridMismatch(
            "ensemble members use different grids".into(),
        ));
    }
    Ok(())
}

fn combine_terms(sums: [f64; 3], params: &NormParams) -> f64 {
    let root = |v: f64| v.max(0.0).powf(1.0 / params.p);
    match params.order {
        NormOrder::L => root(sums[0]),
        NormOrder::H1 => root(sums[0]) + root(sums[1]),
        NormOrder::H2 => root(sums[0]) + root(sums[1]) + root(sums[2]),
    }
}

/// Monte Carlo weighted norm of an ensemble up to `params.horizon`.
pub fn weighted_norm(ensemble: &[FieldSolution], params: &NormParams) -> Result<f64> {
    check_ensemble(ensemble)?;
    let tau = params.horizon.unwrap_or(ensemble[0].time.horizon());
    weighted_norm_stopped(ensemble, params, &vec![tau; ensemble.len()])
}

/// Weighted norm with a separate horizon per member (for stopped norms).
pub fn weighted_norm_stopped(
    ensemble: &[FieldSolution],
    params: &NormParams,
    horizons: &[f64],
) -> Result<f64> {
    check_ensemble(ensemble)?;
    if horizons.len() != ensemble.len() {
        return Err(Error::GridMismatch(format!(
            "{} horizons for {} members",
            horizons.len(),
            ensemble.len()
        )));
    }
    if horizons.iter().any(|t| !(*t >= 0.0)) {
        return invalid("horizons must be nonnegative");
    }
    let terms: Vec<[f64; 3]> = ensemble
        .par_iter()
        .zip(horizons.par_iter())
        .map(|(f, &tau)| member_terms(f, params, tau))
        .collect();
    let n = ensemble.len() as f64;
    let mut sums = [0.0; 3];
    for t in &terms {
        for k in 0..3 {
            sums[k] += t[k] / n;
        }
    }
    Ok(combine_terms(sums, params))
}

/// Exponents of the boundary decay and the weighted estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentConstants {
    /// `θ₀ = p(1 + 2α log₂ γ)`.
    pub theta0: f64,
    /// `χ = -2α log₂ γ`.
    pub chi: f64,
    /// `ε₀ = -2α₀ log₂ γ`.
    pub epsilon0: f64,
    /// `θ₀ - 2 + 2p(1 - α) log₂ γ`.
    pub mu_sup: f64,
    /// `|μ_sup - (p(1 + 2 log₂ γ) - 2)|`.
    pub identity_residual: f64,
    /// `γ = 1`: the log terms vanish and `χ = ε₀ = 0`.
    pub degenerate: bool,
    pub p: f64,
    pub alpha: f64,
    pub alpha0: f64,
    pub c: f64,
    pub delta1: f64,
    pub gamma_value: f64,
}

/// Closed-form exponents for `γ ∈ (1/√2, 1]`, `α ∈ (0, 1)`, `p > 2`.
///
/// `alpha0` is the value of `α₀` at the level `c √δ₁`, supplied by the
/// caller (see [`crate::paths::estimate_alpha0`]).
pub fn exponent_constants(
    p: f64,
    alpha: f64,
    c: f64,
    delta1: f64,
    gamma_value: f64,
    alpha0: f64,
) -> Result<ExponentConstants> {
    if !(p > 2.0 && p.is_finite()) {
        return invalid(format!("p must exceed 2, got {p}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("α must lie in (0, 1), got {alpha}"));
    }
    if !(gamma_value > std::f64::consts::FRAC_1_SQRT_2 && gamma_value <= 1.0) {
        return invalid(format!("γ must lie in (1/√2, 1], got {gamma_value}"));
    }
    if !(0.0..=1.0).contains(&alpha0) {
        return invalid(format!("α₀ must lie in [0, 1], got {alpha0}"));
    }
    if !(c > 0.0 && delta1 > 0.0 && delta1 <= 1.0) {
        return invalid(format!(
            "need c > 0 and δ₁ in (0, 1], got c = {c}, δ₁ = {delta1}"
        ));
    }
    let lg = gamma_value.log2();
    let theta0 = p * (1.0 + 2.0 * alpha * lg);
    let chi = -2.0 * alpha * lg;
    let epsilon0 = -2.0 * alpha0 * lg;
    let mu_sup = theta0 - 2.0 + 2.0 * p * (1.0 - alpha) * lg;
    let direct = p * (1.0 + 2.0 * lg) - 2.0;
    Ok(ExponentConstants {
        theta0,
        chi,
        epsilon0,
        mu_sup,
        identity_residual: (mu_sup - direct).abs(),
        degenerate: gamma_value == 1.0,
        p,
        alpha,
        alpha0,
        c,
        delta1,
        gamma_value,
    })
}

/// Least-squares slope of `ln v` against `ln x` over the nodes of the row
/// at time `t` with `x` in the closed window.
pub fn fit_decay_exponent(field: &FieldSolution, t: f64, window: (f64, f64)) -> Result<f64> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return invalid(format!(
            "window ({lo}, {hi}) must satisfy 0 < x_min < x_max"
        ));
    }
    let half = 0.5 * (field.space.x_lo() + field.space.x_hi());
    if hi > half * (1.0 + 1e-12) {
        return invalid(format!("window end {hi} exceeds half the strip ({half})"));
    }
    let Some(n) = field.time.index_of(t) else {
        return invalid(format!("time {t} is not a grid point"));
    };
    let mut pts = Vec::new();
    for i in 0..field.space.len() {
        let x = field.space.x(i);
        if x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12) {
            let v = field.at(n, i);
            if !(v > 0.0) {
                return invalid(format!("field is not positive at x = {x} (value {v})"));
            }
            pts.push((x.ln(), v.ln()));
        }
    }
    if pts.len() < 8 {
        return invalid(format!(
            "only {} grid points in the window, need 8",
            pts.len()
        ));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// `min(T, inf{t : ∫₀ᵗ π ds >= n})` for `π` sampled on `grid`, integrated
/// by the trapezoid rule and inverted exactly on the crossing step.
pub fn tau_n(pi: &[f64], grid: &TimeGrid, n: u32) -> Result<f64> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if pi.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "π has {} samples, grid has {} points",
            pi.len(),
            grid.len()
        )));
    }
    if let Some(v) = pi.iter().find(|v| !(**v >= 0.0)) {
        return invalid(format!("π must be nonnegative, found {v}"));
    }
    let target = n as f64;
    let dt = grid.dt();
    let mut acc = 0.0;
    for j in 0..grid.steps() {
        let (p0, p1) = (pi[j], pi[j + 1]);
        let step = 0.5 * dt * (p0 + p1);
        if acc + step >= target {
            // acc + p0 s + (p1 - p0) s² / (2 dt) = target on [0, dt]
            let need = target - acc;
            let slope = (p1 - p0) / dt;
            let s = if slope.abs() <= 1e-14 * (p0 + p1).max(f64::MIN_POSITIVE) / dt {
                need / p0
            } else {
                let disc = p0 * p0 + 2.0 * slope * need;
                2.0 * need / (p0 + disc.max(0.0).sqrt())
            };
            return Ok((grid.time(j) + s.clamp(0.0, dt)).min(grid.horizon()));
        }
        acc += step;
    }
    Ok(grid.horizon())
}

/// Both sides of the weighted estimate
/// `‖M⁻¹u‖^p_{H²_{p,θ}(τ)} <= N (‖Mf‖^p_{L_{p,μ}(τ)} + ‖g‖^p_{H¹_{p,μ}(τ)})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; 0 when both sides vanish.
    pub ratio: f64,
    pub tau: f64,
    /// Both sides are zero.
    pub vacuous: bool,
    pub lhs_finite: bool,
}

/// Evaluates both sides for ensembles of `u`, `f` and `g` sharing a grid.
///
/// Requires `θ₀ < θ < p`, `0 < μ < μ_sup` and `f`, `g` vanishing for
/// `x >= 1`.
pub fn check_norm_estimate(
    u: &[FieldSolution],
    f: &[FieldSolution],
    g: &[FieldSolution],
    theta: f64,
    mu: f64,
    tau: f64,
    constants: &ExponentConstants,
) -> Result<NormEstimate> {
    let p = constants.p;
    if !(theta > constants.theta0 && theta < p) {
        return invalid(format!(
            "θ = {theta} must lie in (θ₀, p) = ({}, {p})",
            constants.theta0
        ));
    }
    if !(mu > 0.0 && mu < constants.mu_sup) {
        return invalid(format!(
            "μ = {mu} must lie in (0, μ_sup) = (0, {})",
            constants.mu_sup
        ));
    }
    for (name, ens) in [("u", u), ("f", f), ("g", g)] {
        check_ensemble(ens).map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
    }
    if u.len() != f.len()
        || u.len() != g.len()
        || u[0].space != f[0].space
        || u[0].space != g[0].space
    {
        return Err(Error::GridMismatch(
            "u, f and g ensembles differ in size or grid".into(),
        ));
    }
    for (name, ens) in [("f", f), ("g", g)] {
        for field in ens {
            for i in 0..field.space.len() {
                if field.space.x(i) >= 1.0 && field.values.column(i).iter().any(|v| *v != 0.0) {
                    return invalid(format!("{name} does not vanish for x >= 1"));
                }
            }
        }
    }
    let left = NormParams::new(p, theta, NormOrder::H2)?
        .with_horizon(tau)
        .with_weight_power(-1)?;
    let mf = NormParams::new(p, mu, NormOrder::L)?
        .with_horizon(tau)
        .with_weight_power(1)?;
    let gn = NormParams::new(p, mu, NormOrder::H1)?.with_horizon(tau);
    let lhs = weighted_norm(u, &left)?.powf(p);
    let rhs = weighted_norm(f, &mf)?.powf(p) + weighted_norm(g, &gn)?.powf(p);
    let vacuous = lhs == 0.0 && rhs == 0.0;
    let ratio = if vacuous { 0.0 } else { lhs / rhs };
    Ok(NormEstimate {
        lhs,
        rhs,
        ratio,
        tau,
        vacuous,
        lhs_finite: lhs.is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub quantity: String,
    pub p: f64,
    pub theta: f64,
    pub order: u8,
    pub tau: f64,
    pub value: f64,
}

/// CSV `quantity,p,theta,order,tau,value`.
pub fn write_norms_csv<W: Write>(out: W, rows: &[NormRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "p", "theta", "order", "tau", "value"])?;
    for r in rows {
        w.write_record([
            r.quantity.clone(),
            r.p.to_string(),
            r.theta.to_string(),
            r.order.to_string(),
            r.tau.to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `n,tau_n`.
pub fn write_tau_csv<W: Write>(out: W, rows: &[(u32, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "tau_n"])?;
    for (n, tau) in rows {
        w.write_record([n.to_string(), tau.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `t,x_window,fitted_exponent`, the window written as `lo:hi`.
pub fn write_fit_csv<W: Write>(out: W, rows: &[(f64, (f64, f64), f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x_window", "fitted_exponent"])?;
    for (t, (lo, hi), e) in rows {
        w.write_record([t.to_string(), format!("{lo}:{hi}"), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
