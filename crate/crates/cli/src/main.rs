use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use maxprin_cli::config::{ConfigError, ConfigFile, ExperimentConfig, Overrides};
use maxprin_cli::registry;
use maxprin_cli::summary::Run;

/// Runs a registered experiment and writes its CSV outputs and summary.
///
/// Exit status: 0 when every check passes, 1 when any check fails, 2 on a
/// configuration error.
#[derive(Debug, Parser)]
#[command(name = "maxprin", version)]
struct Args {
    /// Experiment name (see --list).
    #[arg(long)]
    experiment: Option<String>,
    /// TOML file with flat key = value settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo sample count.
    #[arg(long)]
    paths: Option<usize>,
    /// Reduced problem sizes for a fast desk run.
    #[arg(long)]
    quick: bool,
    /// Print the experiment registry and exit.
    #[arg(long)]
    list: bool,
}

fn config_error(e: ConfigError) -> ExitCode {
    eprintln!("configuration error: {e}");
    if matches!(
        e,
        ConfigError::UnknownExperiment(_) | ConfigError::MissingExperiment
    ) {
        eprint!("registered experiments:\n{}", registry::listing());
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list {
        print!("{}", registry::listing());
        return ExitCode::SUCCESS;
    }
    let file = match &args.config {
        Some(path) => match ConfigFile::load(path) {
            Ok(f) => f,
            Err(e) => return config_error(e),
        },
        None => ConfigFile::default(),
    };
    let overrides = Overrides {
        experiment: args.experiment,
        seed: args.seed,
        out_dir: args.out,
        n_samples: args.paths,
        quick: args.quick,
    };
    let cfg = match ExperimentConfig::resolve(file, overrides) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let exp = registry::find(&cfg.experiment).expect("resolved experiments are registered");

    let mut run = match Run::new(&cfg.out_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!(
                "cannot create output directory {}: {e}",
                cfg.out_dir.display()
            );
            return ExitCode::from(2);
        }
    };
    if let Err(e) = (exp.run)(&cfg, &mut run) {
        eprintln!("{}: {e}", cfg.experiment);
        return ExitCode::from(2);
    }
    match run.finish(&cfg) {
        Ok(lines) => print!("{lines}"),
        Err(e) => {
            eprintln!("cannot write summary: {e}");
            return ExitCode::from(2);
        }
    }
    let pass = run.passed();
    println!(
        "RESULT {} {}",
        cfg.experiment,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
