use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Collects checks and written files for one experiment run.
#[derive(Debug)]
pub struct Run {
    out_dir: PathBuf,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    seed: u64,
    pass: bool,
    config: &'a ExperimentConfig,
    checks: &'a [Check],
    files: &'a [String],
}

impl Run {
    pub fn new(out_dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            checks: Vec::new(),
            files: Vec::new(),
        })
    }

    /// Records a check passing when `value <= threshold`.
    pub fn at_most(&mut self, name: &str, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, value <= threshold, value, threshold, detail);
    }

    pub fn push(
        &mut self,
        name: &str,
        pass: bool,
        value: f64,
        threshold: f64,
        detail: impl Into<String>,
    ) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            value,
            threshold,
            detail: detail.into(),
        });
    }

    /// Opens `name` in the output directory and records it.
    pub fn create(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes `summary.json` and returns the CHECK lines.
    pub fn finish(&mut self, cfg: &ExperimentConfig) -> std::io::Result<String> {
        let summary = Summary {
            experiment: &cfg.experiment,
            seed: cfg.seed,
            pass: self.passed(),
            config: cfg,
            checks: &self.checks,
            files: &self.files,
        };
        let mut w = BufWriter::new(File::create(self.out_dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, &summary)?;
        writeln!(w)?;
        w.flush()?;

        let mut lines = String::new();
        for c in &self.checks {
            lines.push_str(&format!(
                "CHECK {} verdict={} value={} threshold={} {}\n",
                c.name,
                if c.pass { "pass" } else { "fail" },
                c.value,
                c.threshold,
                c.detail
            ));
        }
        Ok(lines)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn check_lines_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::new(dir.path()).unwrap();
        run.at_most("gap", 0.5, 1.0, "ok");
        run.at_most("bias", 2.0, 1.0, "too big");
        assert!(!run.passed());
        let mut cfg = registry::base(false);
        cfg.experiment = "gamma_bounds".into();
        let lines = run.finish(&cfg).unwrap();
        assert_eq!(
            lines,
            "CHECK gap verdict=pass value=0.5 threshold=1 ok\nCHECK bias verdict=fail value=2 threshold=1 too big\n"
        );
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("summary.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(json["pass"], false);
        assert_eq!(json["checks"].as_array().unwrap().len(), 2);
        assert!(json["config"].get("out_dir").is_none());
    }
}
