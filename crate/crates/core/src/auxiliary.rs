//! Strip hitting probabilities of a Wiener particle above a moving boundary,
//! their dyadic bound, and the time change that turns them into auxiliary
//! SPDE solutions.
//!
//! For a boundary path `x_·`, a level `m` and `δ > 0`, the strip of width
//! `2^{-m/2}` is `Q_m = {(s, y): s >= 0, x_s < y < x_s + 2^{-m/2}}`. Starting
//! at `(t, x_t + x)` and running backwards in time,
//!
//! ```text
//! r_m(t, x) = P(particle x_t + x + √δ w_s leaves Q_m through the top)
//! ```
//!
//! where reaching `s > t` without leaving counts as failure. The contraction
//! factor per dyadic level is
//!
//! ```text
//! γ(c, d, δ) = 1 - P(min_{s <= δ/2} w_s <= -c - d/√2, max_{s <= δ/2} w_s <= d - d/√2)
//!           >= (c + d/√2) / (c + d) > 1/√2.
//! ```

use std::f64::consts::SQRT_2;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::paths::{delta_minus, McEstimate, McParams, SamplePath, TimeGrid};
use crate::rng::GaussianIncrements;
use crate::spde_fd::Coefficient;

/// Exit detection is discrete; keep `dt <= 2^{-m} · STRIP_BIAS_STEP`.
pub const STRIP_BIAS_STEP: f64 = 1e-3;

/// `(c + d/√2) / (c + d)`, the gambler's-ruin lower bound for `γ(c, d, δ)`.
pub fn gamma_lower_bound(c: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return invalid(format!("d must be positive, got {d}"));
    }
    if !(c >= 0.0) {
        return invalid(format!("c must be nonnegative, got {c}"));
    }
    if c.is_infinite() {
        return Ok(1.0);
    }
    Ok((c + d / SQRT_2) / (c + d))
}

/// Monte Carlo estimate of `γ(c, d, δ)` on `mc.steps` steps over `[0, δ/2]`.
pub fn estimate_gamma(c: f64, d: f64, delta: f64, mc: McParams) -> Result<McEstimate> {
    gamma_lower_bound(c, d)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("δ must be positive, got {delta}"));
    }
    mc.validate(100)?;
    let grid = TimeGrid::new(delta / 2.0, mc.steps)?;
    let low = -c - d / SQRT_2;
    let high = d - d / SQRT_2;
    let survive: Vec<f64> = (0..mc.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut inc = GaussianIncrements::new(mc.seed, i, grid.dt());
            let mut w = 0.0;
            let mut dipped = false;
            for _ in 0..grid.steps() {
                w += inc.next_increment();
                if w > high {
                    return 1.0;
                }
                dipped |= w <= low;
            }
            if dipped {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Ok(McEstimate::from_samples(&survive, mc.seed))
}

/// `n(y) = [(-2 log₂ y)₊]`.
pub fn n_index(y: f64) -> Result<u32> {
    if !(y > 0.0) {
        return invalid(format!("n(y) needs y > 0, got {y}"));
    }
    Ok((-2.0 * y.log2()).max(0.0).floor() as u32)
}

/// `k(d) = 2 + [(2 log₂ d)₊]`.
pub fn k_index(d: f64) -> Result<u32> {
    if !(d > 0.0) {
        return invalid(format!("k(d) needs d > 0, got {d}"));
    }
    Ok(2 + (2.0 * d.log2()).max(0.0).floor() as u32)
}

/// `(n(y), k(d_arg))`.
pub fn dyadic_indices(y: f64, d_arg: f64) -> Result<(u32, u32)> {
    Ok((n_index(y)?, k_index(d_arg)?))
}

/// Width `2^{-m/2}` of the strip `Q_m`.
#[inline]
pub fn strip_width(m: u32) -> f64 {
    (-(m as f64) / 2.0).exp2()
}

/// Start data for a backward strip exit.
#[derive(Debug, Clone, PartialEq)]
pub struct StripProblem {
    pub boundary: SamplePath,
    pub m: u32,
    pub t: f64,
    pub x: f64,
    pub delta: f64,
}

impl StripProblem {
    pub fn new(boundary: SamplePath, m: u32, t: f64, x: f64, delta: f64) -> Result<Self> {
        let width = strip_width(m);
        if !(x > 0.0 && x < width) {
            return invalid(format!("offset x = {x} must lie in (0, {width})"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return invalid(format!("δ must be positive, got {delta}"));
        }
        check_start_time(&boundary, t)?;
        Ok(Self {
            boundary,
            m,
            t,
            x,
            delta,
        })
    }

    pub fn width(&self) -> f64 {
        strip_width(self.m)
    }
}

fn check_start_time(boundary: &SamplePath, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return invalid(format!("start time must be nonnegative, got {t}"));
    }
    boundary.grid().index_of(t).ok_or_else(|| {
        Error::InvalidInput(format!(
            "start time {t} is not a point of the boundary grid (dt = {}, T = {})",
            boundary.grid().dt(),
            boundary.grid().horizon()
        ))
    })
}

fn check_bias_budget(boundary: &SamplePath, m: u32) -> Result<()> {
    let budget = (-(m as f64)).exp2() * STRIP_BIAS_STEP;
    let dt = boundary.grid().dt();
    if dt > budget * (1.0 + 1e-9) {
        return invalid(format!(
            "boundary grid step {dt} is too coarse for m = {m}; need dt <= {budget}"
        ));
    }
    Ok(())
}

/// Monte Carlo `r̂_m(t, x)` for one start offset.
pub fn estimate_r_m(prob: &StripProblem, mc: McParams) -> Result<McEstimate> {
    let out = estimate_r_m_profile(&prob.boundary, prob.m, prob.t, &[prob.x], prob.delta, mc)?;
    Ok(out[0])
}

/// `r̂_m(t, x)` for several offsets at once, all driven by the same particle
/// paths (common random numbers). Offsets may include the strip edges:
/// `x <= 0` gives 0 and `x >= 2^{-m/2}` gives 1.
///
/// Replica `i` uses stream `i` of `mc.seed`, so two calls with the same
/// seed see identical particle increments up to scaling by `sqrt(dt)`.
pub fn estimate_r_m_profile(
    boundary: &SamplePath,
    m: u32,
    t: f64,
    xs: &[f64],
    delta: f64,
    mc: McParams,
) -> Result<Vec<McEstimate>> {
    mc.validate(1)?;
    if xs.is_empty() {
        return invalid("no offsets given");
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return invalid("offsets must be finite");
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("δ must be positive, got {delta}"));
    }
    let t_idx = check_start_time(boundary, t)?;
    check_bias_budget(boundary, m)?;

    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sorted: Vec<f64> = order.iter().map(|&k| xs[k]).collect();

    let width = strip_width(m);
    let sqrt_delta = delta.sqrt();
    let vals = boundary.values();
    let top = vals[t_idx];
    let dt = boundary.grid().dt();
    let nx = sorted.len();

    let hits = (0..mc.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut inc = GaussianIncrements::new(mc.seed, i, dt);
            let mut hit = vec![0u64; nx];
            // Alive offsets form the contiguous block sorted[lo..hi].
            let (mut lo, mut hi) = (0usize, nx);
            let mut w = 0.0;
            for j in 0..=t_idx {
                if j > 0 {
                    w += inc.next_increment();
                }
                let lower = vals[t_idx - j];
                let moved = top + sqrt_delta * w;
                let thr_hi = lower + width - moved;
                let thr_lo = lower - moved;
                while hi > lo && sorted[hi - 1] >= thr_hi {
                    hi -= 1;
                    hit[hi] = 1;
                }
                while lo < hi && sorted[lo] <= thr_lo {
                    lo += 1;
                }
                if lo == hi {
                    break;
                }
            }
            hit
        })
        .reduce(
            || vec![0u64; nx],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let n = mc.n_samples as f64;
    let mut out = vec![McEstimate::exact(0.0); nx];
    for (pos, &k) in order.iter().enumerate() {
        let p = hits[pos] as f64 / n;
        let std_error = if mc.n_samples > 1 {
            (p * (1.0 - p) / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out[k] = McEstimate {
            value: p,
            std_error,
            n_samples: mc.n_samples,
            seed: mc.seed,
        };
    }
    Ok(out)
}

/// The pieces of the dyadic hitting bound at one `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `n(2^{m/2} x / d)`.
    pub n: u32,
    /// `k(c + d)`.
    pub k: u32,
    /// `M⁻_{m+n} - M⁻_{m-1}`, i.e. `#{j = m..=m+n : Δ⁻_j <= c}`.
    pub count: u32,
    pub exponent: i64,
    /// `γ^{exponent}`.
    pub value: f64,
}

/// Right-hand side `γ^{M⁻_{m+n}(x,c,t) - M⁻_{m-1}(x,c,t) - k}` of the hitting
/// bound, for a given value of `γ(c, d, δ)`.
pub fn bound_r_m(prob: &StripProblem, c: f64, d: f64, gamma: f64) -> Result<f64> {
    Ok(bound_terms(prob, c, d, gamma)?.value)
}

pub fn bound_terms(prob: &StripProblem, c: f64, d: f64, gamma: f64) -> Result<BoundTerms> {
    if !(c > 0.0 && d > 0.0) {
        return invalid(format!("c and d must be positive, got c = {c}, d = {d}"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return invalid(format!("γ must lie in (0, 1], got {gamma}"));
    }
    let n = n_index(prob.width().recip() * prob.x / d)?;
    let k = k_index(c + d)?;
    let mut count = 0u32;
    for j in prob.m..=prob.m + n {
        if delta_minus(&prob.boundary, j as i64, prob.t)? <= c {
            count += 1;
        }
    }
    let exponent = count as i64 - k as i64;
    Ok(BoundTerms {
        n,
        k,
        count,
        exponent,
        value: gamma.powi(exponent as i32),
    })
}

/// `s ↦ 2^{m/2} x_{s 2^{-m}}` on the dilated grid (same step count, horizon
/// and step scaled by `2^m`).
pub fn rescale_boundary(path: &SamplePath, m: u32) -> Result<SamplePath> {
    let factor = (m as f64).exp2();
    let horizon = path.grid().horizon() * factor;
    if !horizon.is_finite() {
        return invalid(format!("dilated horizon 2^{m} · T is not representable"));
    }
    let grid = TimeGrid::new(horizon, path.grid().steps())?;
    let scale = (m as f64 / 2.0).exp2();
    SamplePath::new(
        grid,
        path.values().iter().map(|v| v * scale).collect(),
        path.seed(),
    )
}

/// `ψ_t = ∫₀ᵗ (a - σ²) ds`, its inverse `φ`, and `ξ_τ = ∫₀^{φ_τ} σ dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    /// `ψ` on the driver grid.
    pub psi: Vec<f64>,
    /// Driver grid.
    pub source: TimeGrid,
    /// `φ` on `xi.grid()`.
    pub phi: Vec<f64>,
    /// `ξ` on a uniform grid in `ψ`-time.
    pub xi: SamplePath,
}

impl TimeChange {
    /// `ψ` at an arbitrary driver time, linear between grid points.
    pub fn psi_at(&self, t: f64) -> f64 {
        interpolate(&self.psi, self.source.dt(), t)
    }

    /// `φ` at an arbitrary `ψ`-time, inverting the piecewise-linear `ψ`.
    pub fn phi_at(&self, tau: f64) -> f64 {
        invert_monotone(&self.psi, self.source.dt(), tau)
    }
}

fn interpolate(values: &[f64], dt: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return values[0];
    }
    let r = t / dt;
    let j = r.floor() as usize;
    if j + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let w = r - j as f64;
    values[j] + w * (values[j + 1] - values[j])
}

/// `inf{s : ψ(s) >= τ}` for strictly increasing piecewise-linear `ψ`.
fn invert_monotone(psi: &[f64], dt: f64, tau: f64) -> f64 {
    if tau <= psi[0] {
        return 0.0;
    }
    let last = psi.len() - 1;
    if tau >= psi[last] {
        return last as f64 * dt;
    }
    let j = psi.partition_point(|&p| p < tau);
    // psi[j - 1] < tau <= psi[j]
    let (p0, p1) = (psi[j - 1], psi[j]);
    (j - 1) as f64 * dt + dt * (tau - p0) / (p1 - p0)
}

/// Time change on the default target grid: `ψ_T` split into the driver's
/// step count.
pub fn time_change(
    a: &Coefficient,
    sigma: &Coefficient,
    driver: &SamplePath,
) -> Result<TimeChange> {
    let psi = accumulate_psi(a, sigma, driver.grid())?;
    let target = TimeGrid::new(psi[psi.len() - 1], driver.grid().steps())?;
    build_time_change(psi, sigma, driver, target)
}

/// Time change with `ξ` sampled on `target`, whose horizon must not exceed `ψ_T`.
pub fn time_change_on(
    a: &Coefficient,
    sigma: &Coefficient,
    driver: &SamplePath,
    target: TimeGrid,
) -> Result<TimeChange> {
    let psi = accumulate_psi(a, sigma, driver.grid())?;
    let total = psi[psi.len() - 1];
    if target.horizon() > total * (1.0 + 1e-12) {
        return invalid(format!(
            "target horizon {} exceeds ψ_T = {total}",
            target.horizon()
        ));
    }
    build_time_change(psi, sigma, driver, target)
}

fn accumulate_psi(a: &Coefficient, sigma: &Coefficient, grid: &TimeGrid) -> Result<Vec<f64>> {
    let len = grid.len();
    for c in [a, sigma] {
        if let Coefficient::Series(s) = c {
            if s.len() != len {
                return Err(Error::GridMismatch(format!(
                    "coefficient has {} samples, driver grid has {len} points",
                    s.len()
                )));
            }
        }
    }
    let rate: Vec<f64> = (0..len)
        .map(|n| a.at(n) - sigma.at(n) * sigma.at(n))
        .collect();
    if let Some(n) = rate.iter().position(|&r| !(r > 0.0)) {
        return invalid(format!(
            "a - σ² must be positive; it is {} at t = {}",
            rate[n],
            grid.time(n)
        ));
    }
    let dt = grid.dt();
    let mut psi = Vec::with_capacity(len);
    psi.push(0.0);
    for n in 1..len {
        psi.push(psi[n - 1] + 0.5 * dt * (rate[n - 1] + rate[n]));
    }
    Ok(psi)
}

fn build_time_change(
    psi: Vec<f64>,
    sigma: &Coefficient,
    driver: &SamplePath,
    target: TimeGrid,
) -> Result<TimeChange> {
    let source = *driver.grid();
    let dt = source.dt();
    let w = driver.values();
    let mut ito = Vec::with_capacity(source.len());
    ito.push(0.0);
    for n in 0..source.steps() {
        ito.push(ito[n] + sigma.at(n) * (w[n + 1] - w[n]));
    }
    let phi: Vec<f64> = (0..target.len())
        .map(|k| invert_monotone(&psi, dt, target.time(k)))
        .collect();
    let xi_vals: Vec<f64> = phi.iter().map(|&s| interpolate(&ito, dt, s)).collect();
    let xi = SamplePath::new(target, xi_vals, driver.seed())?;
    Ok(TimeChange {
        psi,
        source,
        phi,
        xi,
    })
}

/// Step count for a `ψ`-time grid on `[0, horizon]` that meets the strip
/// exit bias budget at level `m`.
pub fn strip_steps(horizon: f64, m: u32) -> usize {
    let budget = (-(m as f64)).exp2() * STRIP_BIAS_STEP;
    ((horizon / budget).ceil() as usize).max(1)
}

/// Auxiliary solution `v_m(t, x)` through its hitting representation:
/// `v_m(t, x) = r_m(ξ_·, ψ_t, x)` with `δ = 1`.
///
/// On the strip edges the boundary values `v(t, 0) = 0` and
/// `v(t, 2^{-m/2}) = 1` are returned exactly, as is `v(0, x) = 0` inside.
pub fn v_m_representation(
    a: &Coefficient,
    sigma: &Coefficient,
    driver: &SamplePath,
    m: u32,
    t: f64,
    x: f64,
    mc: McParams,
) -> Result<McEstimate> {
    Ok(v_m_profile(a, sigma, driver, m, t, &[x], mc)?[0])
}

/// [`v_m_representation`] at several offsets under common random numbers.
pub fn v_m_profile(
    a: &Coefficient,
    sigma: &Coefficient,
    driver: &SamplePath,
    m: u32,
    t: f64,
    xs: &[f64],
    mc: McParams,
) -> Result<Vec<McEstimate>> {
    if !(t >= 0.0 && t <= driver.grid().horizon() * (1.0 + 1e-12)) {
        return invalid(format!("time {t} outside the driver horizon"));
    }
    let width = strip_width(m);
    let psi = accumulate_psi(a, sigma, driver.grid())?;
    let psi_t = interpolate(&psi, driver.grid().dt(), t);
    if psi_t <= 0.0 {
        return Ok(xs
            .iter()
            .map(|&x| McEstimate::exact(if x >= width { 1.0 } else { 0.0 }))
            .collect());
    }
    let target = TimeGrid::new(psi_t, strip_steps(psi_t, m))?;
    let tc = build_time_change(psi, sigma, driver, target)?;
    let inner: Vec<f64> = xs.iter().map(|x| x.clamp(0.0, width)).collect();
    let mut est = estimate_r_m_profile(&tc.xi, m, psi_t, &inner, 1.0, mc)?;
    for (e, &x) in est.iter_mut().zip(xs) {
        if x <= 0.0 {
            *e = McEstimate::exact(0.0);
        } else if x >= width {
            *e = McEstimate::exact(1.0);
        }
    }
    Ok(est)
}

/// Constants of the weighted boundary-decay integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub p: f64,
    pub nu: f64,
    pub alpha: f64,
    /// `χ = -2 α log₂ γ(c, d, δ)`.
    pub chi: f64,
    pub c: f64,
    pub d: f64,
    pub delta: f64,
}

impl DecayParams {
    /// Builds the parameters from a value of `γ(c, d, δ)` (an estimate, or
    /// [`gamma_lower_bound`] for the conservative choice) and checks
    /// `1 < νp < pχ + 1`.
    pub fn new(
        p: f64,
        nu: f64,
        alpha: f64,
        gamma: f64,
        c: f64,
        d: f64,
        delta: f64,
    ) -> Result<Self> {
        if !(p > 2.0) {
            return invalid(format!("p must exceed 2, got {p}"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("α must lie in (0, 1), got {alpha}"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return invalid(format!("γ must lie in (0, 1) for χ > 0, got {gamma}"));
        }
        let chi = -2.0 * alpha * gamma.log2();
        let np = nu * p;
        if !(1.0 < np && np < p * chi + 1.0) {
            return invalid(format!(
                "need 1 < νp < pχ + 1, got νp = {np}, pχ + 1 = {}",
                p * chi + 1.0
            ));
        }
        Ok(Self {
            p,
            nu,
            alpha,
            chi,
            c,
            d,
            delta,
        })
    }

    /// `2^{-m(νp - 1)/(2α)}`.
    pub fn prefactor(&self, m: u32) -> f64 {
        (-(m as f64) * (self.nu * self.p - 1.0) / (2.0 * self.alpha)).exp2()
    }
}

/// `x_min · 10^{k / per_decade}` for `k = 0..=decades·per_decade`, ending at
/// the strip width, with `x_min = 2^{-m/2} · 10^{-decades}`.
pub fn log_spaced_nodes(m: u32, per_decade: usize, decades: usize) -> Vec<f64> {
    let width = strip_width(m);
    let total = per_decade * decades;
    (0..=total)
        .map(|k| {
            if k == total {
                width
            } else {
                width * 10f64.powf(k as f64 / per_decade as f64 - decades as f64)
            }
        })
        .collect()
}

/// `2^{-m(νp-1)/(2α)} ∫ x^{-νp} r^p dx` over the sampled part of
/// `(0, 2^{-m/2}]`, by the trapezoid rule in `ln x`.
pub fn decay_statistic(samples: &[(f64, f64)], params: &DecayParams, m: u32) -> Result<f64> {
    let width = strip_width(m);
    let mut pts: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(x, _)| x > 0.0 && x <= width * (1.0 + 1e-12))
        .collect();
    if pts.len() < 2 {
        return invalid("decay statistic needs at least two samples inside the strip");
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let np = params.nu * params.p;
    let integrand = |(x, r): (f64, f64)| x.powf(1.0 - np) * r.max(0.0).powf(params.p);
    let integral: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (integrand(w[0]) + integrand(w[1])) * (w[1].0.ln() - w[0].0.ln()))
        .sum();
    Ok(params.prefactor(m) * integral)
}

/// `π_T`: the supremum over supplied `(m, t)` statistics.
pub fn pi_statistic(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("no decay statistics supplied");
    }
    Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `π_t = max_{m, s <= t}` of per-level statistic series sampled on a common
/// time grid (`series[m][n]`).
pub fn running_pi(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(len) = series.first().map(Vec::len) else {
        return invalid("no decay statistic series supplied");
    };
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::GridMismatch(
            "decay statistic series differ in length".into(),
        ));
    }
    let mut out = Vec::with_capacity(len);
    let mut running = f64::NEG_INFINITY;
    for n in 0..len {
        for s in series {
            running = running.max(s[n]);
        }
        out.push(running);
    }
    Ok(out)
}

/// One row of the hitting-bound table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingRow {
    pub m: u32,
    pub t: f64,
    pub x: f64,
    pub r_hat: f64,
    pub std_err: f64,
    pub bound_rhs: f64,
}

/// CSV `m,t,x,r_hat,std_err,bound_rhs`.
pub fn write_hitting_csv<W: Write>(out: W, rows: &[HittingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "t", "x", "r_hat", "std_err", "bound_rhs"])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.t.to_string(),
            r.x.to_string(),
            r.r_hat.to_string(),
            r.std_err.to_string(),
            r.bound_rhs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRow {
    pub c: f64,
    pub d: f64,
    pub delta: f64,
    pub gamma_hat: f64,
    pub gamma_lb: f64,
}

/// CSV `c,d,delta,gamma_hat,gamma_lb`.
pub fn write_gamma_csv<W: Write>(out: W, rows: &[GammaRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "d", "delta", "gamma_hat", "gamma_lb"])?;
    for r in rows {
        w.write_record([
            r.c.to_string(),
            r.d.to_string(),
            r.delta.to_string(),
            r.gamma_hat.to_string(),
            r.gamma_lb.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{m_minus, simulate_wiener};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn gamma_lower_bound_values() {
        assert_abs_diff_eq!(
            gamma_lower_bound(0.0, 1.0).unwrap(),
            FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            gamma_lower_bound(1.0, 1.0).unwrap(),
            (1.0 + FRAC_1_SQRT_2) / 2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(gamma_lower_bound(1e12, 1.0).unwrap(), 1.0, epsilon = 1e-11);
        assert!(gamma_lower_bound(1.0, 0.0).is_err());
    }

    #[test]
    fn dyadic_index_examples() {
        assert_eq!(dyadic_indices(1.0, 1.0).unwrap(), (0, 2));
        assert_eq!(n_index(0.5).unwrap(), 2);
        assert_eq!(k_index(2.0).unwrap(), 4);
        assert_eq!(n_index(4.0).unwrap(), 0);
        assert!(n_index(0.0).is_err());
        assert!(k_index(-1.0).is_err());
    }

    #[test]
    fn gamma_is_one_for_huge_c() {
        let est = estimate_gamma(50.0, 1.0, 1.0, McParams::new(2000, 3).with_steps(256)).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(estimate_gamma(1.0, 1.0, 1.0, McParams::new(10, 3)).is_err());
    }

    fn flat_boundary(t: f64, dt: f64) -> SamplePath {
        SamplePath::constant(TimeGrid::with_step(t, dt).unwrap(), 0.0)
    }

    #[test]
    fn strip_problem_validation() {
        let b = flat_boundary(1.0, 1e-3);
        assert!(StripProblem::new(b.clone(), 0, 1.0, 1.0, 1.0).is_err());
        assert!(StripProblem::new(b.clone(), 0, 1.0, 0.0, 1.0).is_err());
        assert!(StripProblem::new(b.clone(), 2, 1.0, 0.6, 1.0).is_err());
        assert!(StripProblem::new(b.clone(), 0, 0.5005, 0.5, 1.0).is_err());
        assert!(StripProblem::new(b, 0, 0.5, 0.5, 1.0).is_ok());
    }

    #[test]
    fn bias_budget_is_enforced() {
        let b = flat_boundary(1.0, 1e-3);
        let p = StripProblem::new(b, 1, 1.0, 0.3, 1.0).unwrap();
        assert!(estimate_r_m(&p, McParams::new(10, 1)).is_err());
    }

    #[test]
    fn strip_edges_and_zero_time() {
        let b = flat_boundary(1.0, 1e-3);
        let est = estimate_r_m_profile(
            &b,
            0,
            1.0,
            &[0.0, 1e-12, 1.0, 2.0],
            1.0,
            McParams::new(500, 4),
        )
        .unwrap();
        assert_eq!(est[0].value, 0.0);
        // discrete monitoring lets a start at 0+ escape with probability O(√dt)
        assert!(est[1].value < 0.05);
        assert_eq!(est[2].value, 1.0);
        assert_eq!(est[3].value, 1.0);
        let at_zero = estimate_r_m_profile(&b, 0, 0.0, &[0.5], 1.0, McParams::new(100, 4)).unwrap();
        assert_eq!(at_zero[0].value, 0.0);
    }

    #[test]
    fn profile_is_monotone_in_offset() {
        let grid = TimeGrid::with_step(1.0, 2f64.powi(-12)).unwrap();
        let b = simulate_wiener(grid, 17);
        let xs: Vec<f64> = (1..40).map(|k| k as f64 / 40.0 * strip_width(2)).collect();
        let est = estimate_r_m_profile(&b, 2, 1.0, &xs, 1.0, McParams::new(400, 8)).unwrap();
        assert!(est.windows(2).all(|w| w[0].value <= w[1].value));
        // Single-offset estimates coincide with the profile under common seeds.
        let single = estimate_r_m(
            &StripProblem::new(b, 2, 1.0, xs[10], 1.0).unwrap(),
            McParams::new(400, 8),
        )
        .unwrap();
        assert_eq!(single.value, est[10].value);
    }

    #[test]
    fn bound_counts_match_m_minus_difference() {
        let grid = TimeGrid::with_step(1.0, 2f64.powi(-14)).unwrap();
        for seed in 0..5 {
            let b = simulate_wiener(grid, seed);
            for m in [0u32, 1, 3] {
                let width = strip_width(m);
                for frac in [0.9, 0.3, 0.05] {
                    let p = StripProblem::new(b.clone(), m, 0.75, frac * width, 1.0).unwrap();
                    let terms = bound_terms(&p, 1.0, 1.0, 0.9).unwrap();
                    let hi = m_minus(&b, (m + terms.n) as i64, 1.0, 0.75).unwrap();
                    let lo = m_minus(&b, m as i64 - 1, 1.0, 0.75).unwrap();
                    assert_eq!(terms.count, hi - lo);
                    assert_eq!(terms.value, 0.9f64.powi(terms.exponent as i32));
                }
            }
        }
    }

    #[test]
    fn bound_for_flat_boundary() {
        let b = flat_boundary(1.0, 2f64.powi(-12));
        // m = 0, x = d/8: n = n(1/8) = 6, every Δ = 0, count = n + 1.
        let p = StripProblem::new(b, 0, 1.0, 0.125, 1.0).unwrap();
        let terms = bound_terms(&p, 1.0, 1.0, 0.9).unwrap();
        assert_eq!((terms.n, terms.k, terms.count), (6, 4, 7));
        assert_abs_diff_eq!(terms.value, 0.9f64.powi(3), epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_exponent_gives_vacuous_bound() {
        let b = flat_boundary(1.0, 2f64.powi(-12));
        let p = StripProblem::new(b, 0, 1.0, 0.9, 1.0).unwrap();
        assert!(bound_r_m(&p, 1.0, 1.0, 0.9).unwrap() >= 1.0);
    }

    #[test]
    fn rescale_examples() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let w = simulate_wiener(grid, 2);
        let same = rescale_boundary(&w, 0).unwrap();
        assert_eq!(same.values(), w.values());
        assert_eq!(same.grid(), w.grid());
        let flat = SamplePath::constant(grid, 3.0);
        let r = rescale_boundary(&flat, 4).unwrap();
        assert!(r.values().iter().all(|&v| v == 12.0));
        assert_eq!(r.grid().horizon(), 16.0);
    }

    #[test]
    fn time_change_examples() {
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let w = simulate_wiener(grid, 5);
        let id = time_change(&1.0.into(), &0.0.into(), &w).unwrap();
        for k in (0..grid.len()).step_by(50) {
            assert_abs_diff_eq!(id.psi[k], grid.time(k), epsilon = 1e-12);
            assert_abs_diff_eq!(id.phi[k], id.xi.grid().time(k), epsilon = 1e-12);
            assert_eq!(id.xi.values()[k], 0.0);
        }
        let unit = time_change(&2.0.into(), &1.0.into(), &w).unwrap();
        for k in (0..grid.len()).step_by(7) {
            assert_abs_diff_eq!(unit.xi.values()[k], w.values()[k], epsilon = 1e-10);
        }
        let slow = time_change(&1.0.into(), &0.5.into(), &w).unwrap();
        assert_abs_diff_eq!(slow.psi_at(0.8), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(slow.phi_at(0.3), 0.4, epsilon = 1e-12);
        assert!(time_change(&1.0.into(), &1.0.into(), &w).is_err());
    }

    #[test]
    fn phi_inverts_psi() {
        let grid = TimeGrid::new(2.0, 500).unwrap();
        let w = simulate_wiener(grid, 6);
        let a: Vec<f64> = (0..grid.len())
            .map(|n| 1.5 + (n as f64 * 0.03).sin())
            .collect();
        let s: Vec<f64> = (0..grid.len())
            .map(|n| 0.4 * (n as f64 * 0.011).cos())
            .collect();
        let tc = time_change(&Coefficient::Series(a), &Coefficient::Series(s), &w).unwrap();
        assert!(tc.psi.windows(2).all(|p| p[1] > p[0]));
        for n in 0..grid.len() {
            let t = grid.time(n);
            assert!((tc.phi_at(tc.psi_at(t)) - t).abs() <= grid.dt());
        }
    }

    #[test]
    fn v_m_boundary_values() {
        let grid = TimeGrid::new(0.5, 50).unwrap();
        let w = simulate_wiener(grid, 1);
        let (a, s) = (Coefficient::Constant(1.0), Coefficient::Constant(0.5));
        let mc = McParams::new(50, 2);
        assert_eq!(
            v_m_representation(&a, &s, &w, 2, 0.3, 0.5, mc)
                .unwrap()
                .value,
            1.0
        );
        assert_eq!(
            v_m_representation(&a, &s, &w, 2, 0.3, 0.0, mc)
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(
            v_m_representation(&a, &s, &w, 2, 0.0, 0.25, mc)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn decay_params_enforce_window() {
        assert!(DecayParams::new(4.0, 0.3, 0.5, 0.5, 1.0, 1.0, 1.0).is_ok());
        // νp = 1 is excluded.
        assert!(DecayParams::new(4.0, 0.25, 0.5, 0.5, 1.0, 1.0, 1.0).is_err());
        // pχ + 1 = 5 for p = 4, α = 0.5, γ = 0.5
        assert!(DecayParams::new(4.0, 1.24, 0.5, 0.5, 1.0, 1.0, 1.0).is_ok());
        assert!(DecayParams::new(4.0, 1.26, 0.5, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(DecayParams::new(2.0, 0.6, 0.5, 0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn decay_statistic_zero_and_power_law() {
        let params = DecayParams::new(4.0, 0.2575, 0.5, 0.9, 1.0, 1.0, 1.0).unwrap();
        let nodes = log_spaced_nodes(0, 64, 4);
        assert_eq!(nodes.len(), 257);
        assert_eq!(*nodes.last().unwrap(), 1.0);
        let zero: Vec<(f64, f64)> = nodes.iter().map(|&x| (x, 0.0)).collect();
        assert_eq!(decay_statistic(&zero, &params, 0).unwrap(), 0.0);
        assert!(decay_statistic(&[], &params, 0).is_err());

        // r = min(1, x^χ): ∫_0^1 x^{pχ - νp} dx = 1 / (pχ - νp + 1)
        let q = params.p * params.chi - params.nu * params.p + 1.0;
        let mut errs = Vec::new();
        for decades in [4usize, 8, 12] {
            let pts: Vec<(f64, f64)> = log_spaced_nodes(0, 64, decades)
                .into_iter()
                .map(|x| (x, x.powf(params.chi).min(1.0)))
                .collect();
            let v = decay_statistic(&pts, &params, 0).unwrap();
            errs.push((v - 1.0 / q).abs() * q);
        }
        // truncation below x_min dominates at 4 decades, quadrature after
        assert!(errs[0] > 10.0 * errs[1].max(errs[2]), "{errs:?}");
        assert!(errs[1] < 1e-4 && errs[2] < 1e-4, "{errs:?}");
    }

    #[test]
    fn running_pi_is_monotone_sup() {
        let s = vec![vec![1.0, 0.5, 3.0], vec![0.0, 2.0, 1.0]];
        assert_eq!(running_pi(&s).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(pi_statistic(&[0.3, 0.9, 0.1]).unwrap(), 0.9);
        assert!(pi_statistic(&[]).is_err());
    }
}
