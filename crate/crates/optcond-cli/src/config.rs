use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use optcond::builtins::builtin_ids;
use optcond::families::FamilySpec;
use serde::{Deserialize, Serialize};

/// Full run configuration. Defaults are overridden by a TOML file, which is
/// overridden field-by-field by command-line flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem_id: String,
    pub grid_n: usize,
    /// Sampling density of interval control domains (only P3 uses it).
    pub domain_samples: usize,
    pub eta_pmp: f64,
    pub eta_soc: f64,
    pub tol_fd: f64,
    pub tol_inv: f64,
    pub tol_growth: f64,
    pub alpha_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub family: FamilySpec,
    pub eps0: f64,
    pub chatter_alpha: f64,
    pub output_dir: PathBuf,
    pub export_kernels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem_id: "P1".into(),
            grid_n: 1000,
            domain_samples: 401,
            eta_pmp: 2e-3,
            eta_soc: 1e-4,
            tol_fd: 1e-6,
            tol_inv: 1e-8,
            tol_growth: 1e-9,
            alpha_list: vec![0.2, 0.1, 0.05],
            eps_list: vec![0.25, 0.125, 0.0625, 0.03125, 0.015625],
            family: FamilySpec::default(),
            eps0: 1.0,
            chatter_alpha: 0.5,
            output_dir: PathBuf::from("out"),
            export_kernels: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if !builtin_ids().contains(&self.problem_id.as_str()) {
            bail!(
                "unknown problem {:?}; available: {}",
                self.problem_id,
                builtin_ids().join(", ")
            );
        }
        if self.grid_n < 10 || self.grid_n % 2 != 0 {
            bail!("grid_n must be even and at least 10, got {}", self.grid_n);
        }
        if self.domain_samples < 2 {
            bail!("domain_samples must be at least 2, got {}", self.domain_samples);
        }
        for (name, value) in [
            ("eta_pmp", self.eta_pmp),
            ("eta_soc", self.eta_soc),
            ("tol_fd", self.tol_fd),
            ("tol_inv", self.tol_inv),
            ("tol_growth", self.tol_growth),
            ("eps0", self.eps0),
        ] {
            if !(value.is_finite() && value > 0.0) {
                bail!("{name} must be positive, got {value}");
            }
        }
        if !(0.0..=1.0).contains(&self.chatter_alpha) {
            bail!("chatter_alpha must lie in [0, 1], got {}", self.chatter_alpha);
        }
        Ok(())
    }
}
