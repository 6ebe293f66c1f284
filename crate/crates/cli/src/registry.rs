use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::experiments as ex;
use crate::summary::Run;

pub type Runner = fn(&ExperimentConfig, &mut Run) -> maxprin_core::Result<()>;

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    /// Acceptance criteria the experiment exercises.
    pub criteria: &'static [u32],
    pub defaults: fn(bool) -> ExperimentConfig,
    pub run: Runner,
    pub min_samples: usize,
    pub uses_solver: bool,
    pub uses_strip: bool,
    pub needs_even_level: bool,
    pub needs_dyadic_grid: bool,
    /// Solves on the strip `(0, 2^{-m/2})` rather than `(x_lo, x_hi)`.
    pub solves_on_strip: bool,
}

const BASE: Experiment = Experiment {
    name: "",
    description: "",
    criteria: &[],
    defaults: base,
    run: ex::reflection_check,
    min_samples: 1,
    uses_solver: false,
    uses_strip: false,
    needs_even_level: false,
    needs_dyadic_grid: false,
    solves_on_strip: false,
};

pub fn base(_quick: bool) -> ExperimentConfig {
    ExperimentConfig {
        experiment: String::new(),
        seed: 1,
        out_dir: PathBuf::from("out"),
        horizon: 1.0,
        time_steps: 2048,
        x_lo: 0.0,
        x_hi: 1.0,
        space_cells: 64,
        n_samples: 10_000,
        ensemble_seeds: 10,
        a: 1.0,
        sigma: 0.5,
        c: 1.0,
        d: 1.0,
        delta: 1.0,
        p: 4.0,
        theta: 1.5,
        mu: 0.1,
        alpha: 0.5,
        strip_level_m: 2,
        dyadic_level_n: 8,
        quick: false,
    }
}

fn pick<T>(quick: bool, full: T, reduced: T) -> T {
    if quick {
        reduced
    } else {
        full
    }
}

/// Registered experiments in listing order.
pub static REGISTRY: &[Experiment] = &[
    Experiment {
        name: "reflection_check",
        description: "running-minimum hitting probability against the reflection formula",
        criteria: &[1],
        defaults: |q| ExperimentConfig {
            horizon: 0.5,
            time_steps: 2048,
            n_samples: pick(q, 100_000, 10_000),
            ..base(q)
        },
        run: ex::reflection_check,
        ..BASE
    },
    Experiment {
        name: "gamma_bounds",
        description: "contraction factor estimates against their closed-form lower bound",
        criteria: &[2],
        defaults: |q| ExperimentConfig {
            time_steps: pick(q, 2048, 512),
            n_samples: pick(q, 100_000, 10_000),
            ..base(q)
        },
        run: ex::gamma_bounds,
        min_samples: 100,
        ..BASE
    },
    Experiment {
        name: "strip_hitting",
        description:
            "upper-exit probability of the moving strip: gambler's ruin and the dyadic bound",
        criteria: &[3, 4],
        defaults: |q| ExperimentConfig {
            horizon: 1.0,
            time_steps: pick(q, 32_768, 16_384),
            n_samples: pick(q, 2000, 500),
            ensemble_seeds: pick(q, 20, 3),
            strip_level_m: 4,
            ..base(q)
        },
        run: ex::strip_hitting,
        min_samples: 2,
        uses_strip: true,
        ..BASE
    },
    Experiment {
        name: "strip_scaling",
        description: "strip level m against level 0 on the rescaled boundary",
        criteria: &[5],
        defaults: |q| ExperimentConfig {
            horizon: 1.0,
            time_steps: 16_384,
            n_samples: pick(q, 2000, 500),
            ensemble_seeds: pick(q, 5, 2),
            strip_level_m: 3,
            ..base(q)
        },
        run: ex::strip_scaling,
        min_samples: 2,
        uses_strip: true,
        ..BASE
    },
    Experiment {
        name: "solver_oracles",
        description: "finite-difference solver against separation-of-variables solutions",
        criteria: &[6],
        defaults: |q| ExperimentConfig {
            horizon: 0.1,
            time_steps: pick(q, 13_108, 820),
            space_cells: pick(q, 256, 64),
            ensemble_seeds: pick(q, 1000, 100),
            ..base(q)
        },
        run: ex::solver_oracles,
        uses_solver: true,
        ..BASE
    },
    Experiment {
        name: "energy_identity",
        description: "discrete energy identity for the positive part, pathwise and in mean",
        criteria: &[7],
        defaults: |q| ExperimentConfig {
            horizon: 0.1,
            time_steps: pick(q, 3277, 820),
            space_cells: pick(q, 64, 32),
            ensemble_seeds: pick(q, 1000, 100),
            ..base(q)
        },
        run: ex::energy_identity,
        uses_solver: true,
        ..BASE
    },
    Experiment {
        name: "max_principle_sweep",
        description: "sign preservation for nonpositive data across three refinement levels",
        criteria: &[8],
        defaults: |q| ExperimentConfig {
            horizon: 0.25,
            time_steps: pick(q, 2048, 512),
            space_cells: pick(q, 32, 16),
            ensemble_seeds: pick(q, 100, 10),
            ..base(q)
        },
        run: ex::max_principle_sweep,
        uses_solver: true,
        ..BASE
    },
    Experiment {
        name: "comparison_sweep",
        description:
            "comparison with a scaled solution and with the unit barrier across refinements",
        criteria: &[9],
        defaults: |q| ExperimentConfig {
            horizon: 0.25,
            time_steps: pick(q, 2048, 512),
            space_cells: pick(q, 32, 16),
            ensemble_seeds: pick(q, 100, 10),
            ..base(q)
        },
        run: ex::comparison_sweep,
        uses_solver: true,
        ..BASE
    },
    Experiment {
        name: "envelope_lemma_2_22_1",
        description: "near-boundary envelope of a solution by the auxiliary strip solution",
        criteria: &[10],
        defaults: |q| ExperimentConfig {
            horizon: 0.5,
            time_steps: pick(q, 8192, 4096),
            space_cells: pick(q, 64, 32),
            ensemble_seeds: pick(q, 50, 5),
            strip_level_m: 2,
            ..base(q)
        },
        run: ex::envelope,
        uses_solver: true,
        needs_even_level: true,
        ..BASE
    },
    Experiment {
        name: "decay_exponent_remark_2_23_1",
        description: "boundary decay of the auxiliary solution and the strip decay statistic",
        criteria: &[11],
        defaults: |q| ExperimentConfig {
            horizon: 0.25,
            time_steps: pick(q, 16_384, 4096),
            space_cells: pick(q, 64, 32),
            n_samples: pick(q, 1000, 200),
            ensemble_seeds: pick(q, 10, 2),
            strip_level_m: 2,
            dyadic_level_n: 6,
            ..base(q)
        },
        run: ex::decay_exponent,
        min_samples: 100,
        uses_solver: true,
        solves_on_strip: true,
        ..BASE
    },
    Experiment {
        name: "weighted_norms",
        description: "weighted space-time norms, exponent constants and localising times",
        criteria: &[11],
        defaults: |q| ExperimentConfig {
            horizon: 0.25,
            time_steps: pick(q, 4096, 1024),
            space_cells: pick(q, 64, 32),
            ensemble_seeds: pick(q, 10, 2),
            strip_level_m: 0,
            ..base(q)
        },
        run: ex::weighted_norms,
        uses_solver: true,
        solves_on_strip: true,
        ..BASE
    },
    Experiment {
        name: "path_statistics",
        description: "dyadic oscillation statistics of Wiener paths and the level-count exponent",
        criteria: &[2, 11],
        defaults: |q| ExperimentConfig {
            horizon: 1.0,
            time_steps: pick(q, 8192, 2048),
            n_samples: pick(q, 200, 20),
            c: 0.866_025_403_784_438_6,
            dyadic_level_n: pick(q, 10, 8),
            ..base(q)
        },
        run: ex::path_statistics,
        needs_dyadic_grid: true,
        ..BASE
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// One line per experiment: name, criteria, description.
pub fn listing() -> String {
    let mut out = String::new();
    for e in REGISTRY {
        let criteria: Vec<String> = e.criteria.iter().map(u32::to_string).collect();
        out.push_str(&format!(
            "{:<30} criteria {:<6} {}\n",
            e.name,
            criteria.join(","),
            e.description
        ));
    }
    out
}
