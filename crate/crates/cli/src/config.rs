//! Run configuration: a JSON config file plus command-line overrides,
//! where flags win.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const METHODS: &[&str] = &[
    "cs-g-omp",
    "g-omp",
    "cs-g-omp-single",
    "cs-g-omp-nowhiten",
    "cs-g-fr",
    "g-fr",
    "sparse",
    "glm-omp",
];

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_csv: Option<PathBuf>,
    pub group_spec: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub method: Option<String>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub center_features: bool,
    /// Ridge added to group Gram matrices when whitening.
    pub whiten_ridge: Option<f64>,
    pub synth: Option<SynthConfig>,
    pub glm: Option<GlmConfig>,
    pub sparse: Option<SparseConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub costs: Vec<f64>,
    pub sparsity: usize,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub correlation: f64,
    /// Extra rows generated and split off as a held-out set when sequencing
    /// directly from synthetic data.
    #[serde(default)]
    pub n_test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmConfig {
    pub p: usize,
    pub mean_fn: String,
    pub lambda: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseConfig {
    pub n_points: Option<usize>,
    pub tol: Option<f64>,
    pub refit_lambda: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))
            }
        }
    }

    pub fn method(&self) -> Result<&str, CliError> {
        let m = self.method.as_deref().unwrap_or("cs-g-omp");
        if !METHODS.contains(&m) {
            return Err(CliError::Config(format!(
                "unknown method '{m}'; expected one of {}",
                METHODS.join(", ")
            )));
        }
        Ok(m)
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        let l = self.lambda.unwrap_or(0.01);
        if l < 0.0 || !l.is_finite() {
            return Err(CliError::Config(format!("lambda must be >= 0, got {l}")));
        }
        Ok(l)
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let a = self.alpha.unwrap_or(0.97);
        if !(0.0..=1.0).contains(&a) {
            return Err(CliError::Config(format!(
                "alpha must lie in [0, 1], got {a}"
            )));
        }
        Ok(a)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn whiten_ridge(&self) -> Result<f64, CliError> {
        let r = self.whiten_ridge.unwrap_or(0.0);
        if r < 0.0 || !r.is_finite() {
            return Err(CliError::Config(format!(
                "whiten_ridge must be >= 0, got {r}"
            )));
        }
        Ok(r)
    }
}
