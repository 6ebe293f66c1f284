use std::path::{Path, PathBuf};

use maxprin_core::auxiliary::strip_width;
use serde::{Deserialize, Serialize};

use crate::registry::{self, Experiment};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("no experiment selected (use --experiment or set `experiment` in the config)")]
    MissingExperiment,
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
}

/// Keys accepted in a config file. Every key is optional; unset keys fall
/// back to the experiment's defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(rename = "horizon_T")]
    pub horizon: Option<f64>,
    #[serde(rename = "time_steps_N")]
    pub time_steps: Option<usize>,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    #[serde(rename = "space_cells_M")]
    pub space_cells: Option<usize>,
    pub n_samples: Option<usize>,
    pub ensemble_seeds: Option<usize>,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub delta: Option<f64>,
    pub p: Option<f64>,
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub strip_level_m: Option<u32>,
    pub dyadic_level_n: Option<u32>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(rename = "horizon_T")]
    pub horizon: f64,
    #[serde(rename = "time_steps_N")]
    pub time_steps: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    #[serde(rename = "space_cells_M")]
    pub space_cells: usize,
    pub n_samples: usize,
    pub ensemble_seeds: usize,
    pub a: f64,
    pub sigma: f64,
    pub c: f64,
    pub d: f64,
    pub delta: f64,
    pub p: f64,
    pub theta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub strip_level_m: u32,
    pub dyadic_level_n: u32,
    pub quick: bool,
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub n_samples: Option<usize>,
    pub quick: bool,
}

impl ExperimentConfig {
    /// Defaults for `exp`, then the file, then the command line; validated.
    pub fn resolve(file: ConfigFile, cli: Overrides) -> Result<Self, ConfigError> {
        let name = cli
            .experiment
            .clone()
            .or(file.experiment.clone())
            .ok_or(ConfigError::MissingExperiment)?;
        let exp =
            registry::find(&name).ok_or_else(|| ConfigError::UnknownExperiment(name.clone()))?;
        let mut cfg = (exp.defaults)(cli.quick);
        cfg.experiment = name;
        cfg.quick = cli.quick;

        macro_rules! take {
            ($($field:ident),*) => {$( if let Some(v) = file.$field { cfg.$field = v; } )*};
        }
        take!(
            seed,
            out_dir,
            horizon,
            time_steps,
            x_lo,
            x_hi,
            space_cells,
            n_samples,
            ensemble_seeds,
            a,
            sigma,
            c,
            d,
            delta,
            p,
            theta,
            mu,
            alpha,
            strip_level_m,
            dyadic_level_n
        );
        if let Some(v) = cli.seed {
            cfg.seed = v;
        }
        if let Some(v) = cli.out_dir {
            cfg.out_dir = v;
        }
        if let Some(v) = cli.n_samples {
            cfg.n_samples = v;
        }
        cfg.validate(exp)?;
        Ok(cfg)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.space_cells as f64
    }

    fn validate(&self, exp: &Experiment) -> Result<(), ConfigError> {
        fn fail(key: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                key,
                message: message.into(),
            })
        }
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;

        if !finite_pos(self.horizon) {
            return fail(
                "horizon_T",
                format!("must be positive and finite, got {}", self.horizon),
            );
        }
        if self.time_steps == 0 {
            return fail("time_steps_N", "must be at least 1");
        }
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < self.x_hi) {
            return fail(
                "x_lo",
                format!("need x_lo < x_hi, got ({}, {})", self.x_lo, self.x_hi),
            );
        }
        if self.space_cells < 2 {
            return fail("space_cells_M", "need at least 2 cells");
        }
        if self.n_samples < exp.min_samples {
            return fail(
                "n_samples",
                format!(
                    "{} needs at least {} samples, got {}",
                    exp.name, exp.min_samples, self.n_samples
                ),
            );
        }
        if self.ensemble_seeds == 0 {
            return fail("ensemble_seeds", "must be at least 1");
        }
        if !finite_pos(self.a) {
            return fail("a", format!("must be positive, got {}", self.a));
        }
        if !self.sigma.is_finite() || self.a - self.sigma * self.sigma <= 0.0 {
            return fail(
                "sigma",
                format!(
                    "coercivity needs a - sigma^2 > 0, got a = {}, sigma = {}",
                    self.a, self.sigma
                ),
            );
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return fail("c", format!("must be nonnegative, got {}", self.c));
        }
        if !finite_pos(self.d) {
            return fail("d", format!("must be positive, got {}", self.d));
        }
        if !finite_pos(self.delta) {
            return fail("delta", format!("must be positive, got {}", self.delta));
        }
        if !(self.p.is_finite() && self.p > 2.0) {
            return fail("p", format!("must exceed 2, got {}", self.p));
        }
        if !(self.theta > 0.0 && self.theta < self.p) {
            return fail("theta", format!("must lie in (0, p), got {}", self.theta));
        }
        if !finite_pos(self.mu) {
            return fail("mu", format!("must be positive, got {}", self.mu));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.strip_level_m > 12 {
            return fail(
                "strip_level_m",
                format!("at most 12, got {}", self.strip_level_m),
            );
        }
        if self.dyadic_level_n == 0 || self.dyadic_level_n > 20 {
            return fail(
                "dyadic_level_n",
                format!("must lie in 1..=20, got {}", self.dyadic_level_n),
            );
        }

        if exp.uses_solver {
            let dx = if exp.solves_on_strip {
                strip_width(self.strip_level_m) / self.space_cells as f64
            } else {
                self.dx()
            };
            let cfl = dx * dx / (2.0 * self.a);
            if self.dt() > cfl * (1.0 + 1e-12) {
                return fail(
                    "time_steps_N",
                    format!(
                        "dt = {} exceeds dx^2/(2a) = {cfl}; raise time_steps_N",
                        self.dt()
                    ),
                );
            }
        }
        if exp.uses_strip {
            // discrete monitoring of the strip edges
            let budget = (-(self.strip_level_m as f64)).exp2() * 1e-3;
            if self.dt() > budget * (1.0 + 1e-12) {
                return fail(
                    "time_steps_N",
                    format!(
                        "dt = {} exceeds 2^-m * 1e-3 = {budget} at strip_level_m = {}",
                        self.dt(),
                        self.strip_level_m
                    ),
                );
            }
        }
        if exp.needs_even_level {
            if self.strip_level_m % 2 == 1 {
                return fail(
                    "strip_level_m",
                    "must be even so the strip edge is a grid node",
                );
            }
            let width = strip_width(self.strip_level_m);
            if self.x_lo != 0.0 || self.x_hi <= width {
                return fail(
                    "x_hi",
                    format!("need x_lo = 0 and x_hi > {width} so the strip lies inside the domain"),
                );
            }
            let nodes = width / self.dx();
            if (nodes - nodes.round()).abs() > 1e-9 {
                return fail(
                    "space_cells_M",
                    format!("the strip edge {width} is not a grid node"),
                );
            }
        }
        if exp.needs_dyadic_grid {
            let finest = (-(self.dyadic_level_n as f64)).exp2() / 8.0;
            if self.dt() > finest * (1.0 + 1e-12) {
                return fail(
                    "time_steps_N",
                    format!(
                        "dt = {} exceeds 2^-n / 8 = {finest} at dyadic_level_n",
                        self.dt()
                    ),
                );
            }
        }
        Ok(())
    }
}
