//! Time grids, Wiener path simulation and dyadic oscillation statistics.
//!
//! A [`SamplePath`] lives on a uniform [`TimeGrid`] and is extended to
//! negative times by its initial value: `x_s = x_0` for `s <= 0`. All path
//! functionals below read grid points only.
//!
//! For a path `x` and a level `n >= 0`,
//!
//! ```text
//! Δ⁻_n(x, t) = 2^{n/2} · osc_{[t - 2^{-n}, t]} x
//! M⁻_n(x, c, t) = #{ k = 0..=n : Δ⁻_k(x, t) <= c }      (0 when n < 0)
//! ```
//!
//! `M⁻_n / (n + 1)`, minimised over `t` in `[0, T]`, concentrates for Wiener
//! paths around a deterministic level `α₀(c)`; [`estimate_alpha0`] measures it.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::rng::GaussianIncrements;

/// Relative slack used when snapping real times to grid indices.
const GRID_EPS: f64 = 1e-9;

/// Uniform grid `t_j = j * T / N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid(format!("time grid horizon must be positive, got {horizon}"));
        }
        if steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with step `dt` on `[0, horizon]`; `horizon / dt` must be an integer.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > GRID_EPS * ratio.max(1.0) || steps < 1.0 {
            return invalid(format!("horizon {horizon} is not a multiple of dt = {dt}"));
        }
        Self::new(horizon, steps as usize)
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `N + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    /// Index of the grid point equal to `t`, if `t` sits on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.dt();
        let j = r.round();
        if j < 0.0 || j > self.steps as f64 || (r - j).abs() > GRID_EPS * r.abs().max(1.0) {
            None
        } else {
            Some(j as usize)
        }
    }

    /// Largest grid index with `t_j <= t`, clamped to `[0, N]`.
    pub fn floor_index(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let r = t / self.dt();
        ((r + GRID_EPS * r.max(1.0)).floor() as usize).min(self.steps)
    }

    /// Number of whole steps covering a duration, rounding down with slack.
    pub fn steps_in(&self, duration: f64) -> usize {
        let r = duration / self.dt();
        (r + GRID_EPS * r.max(1.0)).floor() as usize
    }
}

/// A real path sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
    seed: u64,
    stream: u64,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "path has {} values but the grid has {} points",
                values.len(),
                grid.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("path values must be finite");
        }
        Ok(Self {
            grid,
            values,
            seed,
            stream: 0,
        })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            seed: 0,
            stream: 0,
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|j| f(grid.time(j))).collect();
        Self::new(grid, values, 0)
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Value at an arbitrary time, linear between grid points; `x_s = x_0`
    /// for `s <= 0` and `x_s = x_T` beyond the horizon.
    pub fn value_at(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.values[0];
        }
        let dt = self.grid.dt();
        let r = s / dt;
        let j = r.floor() as usize;
        if j >= self.grid.steps {
            return self.values[self.grid.steps];
        }
        let w = r - j as f64;
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }

    /// Successive differences `x_{t_{j+1}} - x_{t_j}`.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub(crate) fn with_stream(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }
}

/// Monte Carlo settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McParams {
    pub n_samples: usize,
    pub seed: u64,
    /// Time steps for estimators that simulate their own driver.
    pub steps: usize,
}

impl McParams {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            steps: 2048,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub(crate) fn validate(&self, min_samples: usize) -> Result<()> {
        if self.n_samples < min_samples.max(1) {
            return invalid(format!(
                "need at least {} Monte Carlo samples, got {}",
                min_samples.max(1),
                self.n_samples
            ));
        }
        if self.steps == 0 {
            return invalid("Monte Carlo time discretisation needs at least one step");
        }
        Ok(())
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Sample mean with `sd / sqrt(n)` as standard error.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        assert!(n > 0, "empty sample");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error,
            n_samples: n,
            seed,
        }
    }

    /// Deterministic value with zero error.
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 1,
            seed: 0,
        }
    }
}

/// Standard Wiener path on `grid`, stream 0 of `seed`.
pub fn simulate_wiener(grid: TimeGrid, seed: u64) -> SamplePath {
    simulate_wiener_stream(grid, seed, 0)
}

/// Standard Wiener path on `grid` using stream `stream` of `seed`.
pub fn simulate_wiener_stream(grid: TimeGrid, seed: u64, stream: u64) -> SamplePath {
    let mut inc = GaussianIncrements::new(seed, stream, grid.dt());
    let mut values = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    values.push(w);
    for _ in 0..grid.steps() {
        w += inc.next_increment();
        values.push(w);
    }
    SamplePath {
        grid,
        values,
        seed,
        stream: 0,
    }
    .with_stream(seed, stream)
}

/// `max - min` of the path over grid points in `[t_lo, t_hi]`, with the
/// path frozen at `x_0` for negative times.
pub fn oscillation(path: &SamplePath, t_lo: f64, t_hi: f64) -> Result<f64> {
    if !(t_lo <= t_hi) {
        return invalid(format!("oscillation window [{t_lo}, {t_hi}] is reversed"));
    }
    let grid = path.grid();
    if t_hi > grid.horizon() * (1.0 + GRID_EPS) {
        return invalid(format!(
            "window end {t_hi} lies beyond the path horizon {}",
            grid.horizon()
        ));
    }
    if t_hi <= 0.0 {
        return Ok(0.0);
    }
    let dt = grid.dt();
    let lo = if t_lo <= 0.0 {
        0
    } else {
        let r = t_lo / dt;
        (r - GRID_EPS * r.max(1.0)).ceil() as usize
    };
    let hi = grid.floor_index(t_hi);
    if lo > hi {
        return Ok(0.0);
    }
    let window = &path.values()[lo..=hi];
    let (mn, mx) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    Ok(mx - mn)
}

/// `Δ⁻_n(x, t) = 2^{n/2} · osc_{[t - 2^{-n}, t]} x`.
pub fn delta_minus(path: &SamplePath, n: i64, t: f64) -> Result<f64> {
    if n < 0 {
        return invalid(format!("dyadic level must be nonnegative, got {n}"));
    }
    if !(t >= 0.0) {
        return invalid(format!("time must be nonnegative, got {t}"));
    }
    let width = (-(n as f64)).exp2();
    Ok((n as f64 / 2.0).exp2() * oscillation(path, t - width, t)?)
}

/// `M⁻_n(x, c, t)`: how many levels `k = 0..=n` have `Δ⁻_k <= c`.
/// Zero for negative `n`.
pub fn m_minus(path: &SamplePath, n: i64, c: f64, t: f64) -> Result<u32> {
    if !(c > 0.0) {
        return invalid(format!("oscillation budget c must be positive, got {c}"));
    }
    if !(t >= 0.0) {
        return invalid(format!("time must be nonnegative, got {t}"));
    }
    let mut count = 0;
    for k in 0..=n.max(-1) {
        if k < 0 {
            break;
        }
        if delta_minus(path, k, t)? <= c {
            count += 1;
        }
    }
    Ok(count)
}

/// `Δ⁻_n(x, t_j)` at every grid point, via monotone-deque sliding extrema.
///
/// Agrees with [`delta_minus`] at each grid time.
pub fn delta_minus_series(path: &SamplePath, n: u32) -> Vec<f64> {
    let grid = path.grid();
    let width = grid.steps_in((-(n as f64)).exp2());
    let scale = (n as f64 / 2.0).exp2();
    let osc = sliding_oscillation(path.values(), width);
    osc.into_iter().map(|o| scale * o).collect()
}

/// `max - min` over `values[j - width ..= j]` (clamped at 0) for each `j`.
fn sliding_oscillation(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    for (j, &v) in values.iter().enumerate() {
        while maxq.back().is_some_and(|&i| values[i] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(j);
        while minq.back().is_some_and(|&i| values[i] >= v) {
            minq.pop_back();
        }
        minq.push_back(j);
        let lo = j.saturating_sub(width);
        while maxq.front().is_some_and(|&i| i < lo) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&i| i < lo) {
            minq.pop_front();
        }
        out.push(values[maxq[0]] - values[minq[0]]);
    }
    out
}

/// `M⁻_n(x, c, t_j)` at every grid point.
pub fn m_minus_series(path: &SamplePath, n: u32, c: f64) -> Vec<u32> {
    let mut counts = vec![0u32; path.grid().len()];
    for k in 0..=n {
        for (cnt, d) in counts.iter_mut().zip(delta_minus_series(path, k)) {
            if d <= c {
                *cnt += 1;
            }
        }
    }
    counts
}

/// `min_{t_j in [0, T]} M⁻_{n}(x, c, t_j) / (n + 1)` for one path.
pub fn alpha0_statistic(path: &SamplePath, c: f64, n_max: u32) -> f64 {
    let worst = m_minus_series(path, n_max, c)
        .into_iter()
        .min()
        .unwrap_or(0);
    worst as f64 / (n_max as f64 + 1.0)
}

/// Median across Wiener paths of [`alpha0_statistic`].
///
/// The grid must put at least eight samples in the finest window,
/// `dt <= 2^{-n_max} / 8`. The reported error is the large-sample standard
/// error of a median, `1.2533 · sd / sqrt(n)`.
pub fn estimate_alpha0(c: f64, grid: TimeGrid, n_max: u32, mc: McParams) -> Result<McEstimate> {
    if !(c > 0.0) {
        return invalid(format!("oscillation budget c must be positive, got {c}"));
    }
    mc.validate(1)?;
    let finest = (-(n_max as f64)).exp2() / 8.0;
    if grid.dt() > finest * (1.0 + GRID_EPS) {
        return invalid(format!(
            "grid step {} is too coarse for n_max = {n_max}; need dt <= {finest}",
            grid.dt()
        ));
    }
    let stats: Vec<f64> = (0..mc.n_samples as u64)
        .into_par_iter()
        .map(|i| alpha0_statistic(&simulate_wiener_stream(grid, mc.seed, i), c, n_max))
        .collect();
    Ok(median_estimate(&stats, mc.seed))
}

pub(crate) fn median_estimate(samples: &[f64], seed: u64) -> McEstimate {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let spread = McEstimate::from_samples(samples, seed).std_error;
    McEstimate {
        value: median,
        std_error: 1.2533 * spread,
        n_samples: n,
        seed,
    }
}

/// Probability that a Wiener path sampled on `grid` drops to `-level` or
/// below by the horizon.
pub fn estimate_running_min_hit(grid: TimeGrid, level: f64, mc: McParams) -> Result<McEstimate> {
    mc.validate(1)?;
    if !(level >= 0.0) {
        return invalid(format!("level must be nonnegative, got {level}"));
    }
    let hits: Vec<f64> = (0..mc.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut inc = GaussianIncrements::new(mc.seed, i, grid.dt());
            let mut w = 0.0;
            for _ in 0..grid.steps() {
                w += inc.next_increment();
                if w <= -level {
                    return 1.0;
                }
            }
            0.0
        })
        .collect();
    Ok(McEstimate::from_samples(&hits, mc.seed))
}

/// One row of the path statistics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStatRow {
    pub path_index: u64,
    pub n: u32,
    pub t: f64,
    pub delta_minus: f64,
    pub m_minus: u32,
}

/// Rows for every grid time of one path at level `n`.
pub fn path_stat_rows(path_index: u64, path: &SamplePath, n: u32, c: f64) -> Vec<PathStatRow> {
    let deltas = delta_minus_series(path, n);
    let counts = m_minus_series(path, n, c);
    (0..path.grid().len())
        .map(|j| PathStatRow {
            path_index,
            n,
            t: path.grid().time(j),
            delta_minus: deltas[j],
            m_minus: counts[j],
        })
        .collect()
}

/// CSV with columns `path_index,n,t,delta_minus,m_minus`.
pub fn write_path_stats_csv<W: Write>(out: W, rows: &[PathStatRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_index", "n", "t", "delta_minus", "m_minus"])?;
    for r in rows {
        w.write_record([
            r.path_index.to_string(),
            r.n.to_string(),
            r.t.to_string(),
            r.delta_minus.to_string(),
            r.m_minus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(steps: usize) -> TimeGrid {
        TimeGrid::new(1.0, steps).unwrap()
    }

    fn linear(steps: usize) -> SamplePath {
        SamplePath::from_fn(unit_grid(steps), |s| s).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::with_step(1.0, 0.3).is_err());
        assert_eq!(TimeGrid::with_step(1.0, 0.125).unwrap().steps(), 8);
    }

    #[test]
    fn wiener_starts_at_zero_and_replays() {
        let g = unit_grid(64);
        let a = simulate_wiener(g, 11);
        assert_eq!(a.values()[0], 0.0);
        assert_eq!(a, simulate_wiener(g, 11));
        assert_ne!(a.values(), simulate_wiener(g, 12).values());
    }

    #[test]
    fn oscillation_basics() {
        let g = unit_grid(64);
        let flat = SamplePath::constant(g, 3.0);
        assert_eq!(oscillation(&flat, 0.0, 1.0).unwrap(), 0.0);
        let lin = linear(64);
        assert_abs_diff_eq!(oscillation(&lin, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(oscillation(&lin, -1.0, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert!(oscillation(&lin, 0.6, 0.5).is_err());
        assert_eq!(oscillation(&lin, -2.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn delta_minus_examples() {
        let lin = linear(1024);
        assert_abs_diff_eq!(delta_minus(&lin, 0, 1.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(delta_minus(&lin, 4, 1.0).unwrap(), 0.25, epsilon = 1e-14);
        let flat = SamplePath::constant(unit_grid(16), -2.0);
        assert_eq!(delta_minus(&flat, 3, 0.5).unwrap(), 0.0);
        assert!(delta_minus(&lin, -1, 1.0).is_err());
    }

    #[test]
    fn m_minus_examples() {
        let lin = linear(1024);
        assert_eq!(m_minus(&lin, -1, 1.0, 1.0).unwrap(), 0);
        assert_eq!(m_minus(&lin, 5, 1.0, 1.0).unwrap(), 6);
        let flat = SamplePath::constant(unit_grid(1024), 0.4);
        assert_eq!(m_minus(&flat, 7, 0.01, 0.7).unwrap(), 8);
        assert!(m_minus(&lin, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn series_agree_with_pointwise() {
        let g = TimeGrid::new(1.0, 512).unwrap();
        let w = simulate_wiener(g, 5);
        for n in [0u32, 2, 5, 9] {
            let s = delta_minus_series(&w, n);
            for j in (0..g.len()).step_by(37) {
                let d = delta_minus(&w, n as i64, g.time(j)).unwrap();
                assert_abs_diff_eq!(s[j], d, epsilon = 1e-12);
            }
        }
        let counts = m_minus_series(&w, 6, 0.8);
        for j in (0..g.len()).step_by(41) {
            assert_eq!(counts[j], m_minus(&w, 6, 0.8, g.time(j)).unwrap());
        }
    }

    #[test]
    fn alpha0_of_constant_path_is_one() {
        let flat = SamplePath::constant(TimeGrid::new(1.0, 1 << 10).unwrap(), 1.0);
        assert_eq!(alpha0_statistic(&flat, 0.1, 6), 1.0);
    }

    #[test]
    fn alpha0_rejects_coarse_grid() {
        let g = TimeGrid::new(1.0, 1 << 8).unwrap();
        assert!(estimate_alpha0(1.0, g, 6, McParams::new(4, 1)).is_err());
        assert!(estimate_alpha0(1.0, g, 5, McParams::new(4, 1)).is_ok());
    }

    #[test]
    fn csv_layout() {
        let rows = path_stat_rows(3, &linear(4), 1, 1.0);
        let mut buf = Vec::new();
        write_path_stats_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path_index,n,t,delta_minus,m_minus"));
        assert_eq!(lines.next(), Some("3,1,0,0,2"));
        assert_eq!(text.lines().count(), 6);
    }
}
