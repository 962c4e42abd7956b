use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;

/// Deterministic on-disk layout: one directory per problem under the output
/// root, with JSON reports at the top, CSV series under `series/` and sweep
/// reports under `convergence/`.
pub struct Layout {
    problem_dir: PathBuf,
    problem_id: String,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Layout {
        Layout {
            problem_dir: config.output_dir.join(&config.problem_id),
            problem_id: config.problem_id.clone(),
        }
    }

    pub fn ensure(&self) -> io::Result<()> {
        fs::create_dir_all(self.problem_dir.join("series"))?;
        fs::create_dir_all(self.problem_dir.join("convergence"))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.problem_dir.join(name)
    }

    /// Path relative to the output root, as listed in the verdict's artifact
    /// inventory (stable across output directories).
    pub fn relative(&self, name: &str) -> String {
        format!("{}/{}", self.problem_id, name)
    }
}

/// The files a full check writes, in write order.
pub fn check_report_names(export_kernels: bool) -> Vec<&'static str> {
    let mut names = vec![
        "pmp.json",
        "soc.json",
        "series/x_bar.csv",
        "series/psi.csv",
        "series/w.csv",
        "series/residual.csv",
        "singular_set.csv",
    ];
    if export_kernels {
        names.push("kernels.csv");
    }
    names.push("verdict.json");
    names.push("run_meta.json");
    names
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
