//! Run configuration: one TOML file, every key optional, flags on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deconv_core::quadrature::DEFAULT_NODES;
use deconv_core::simulation::ScenarioConfig;

/// Error in the configuration or the input files; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Value(f64),
    Rule(String),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Rule("oracle".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Sample CSV with columns `w[,y][,x_true]`.
    pub path: Option<PathBuf>,
    /// Replicated measurements CSV with columns `w1..wm`.
    pub replicated: Option<PathBuf>,
    /// Error law of the data, when it is read from a file.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lo: None,
            hi: None,
            points: deconv_core::density::DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    /// kde, deconv-kde, pce, local-constant, local-linear,
    /// deconv-local-constant or deconv-local-linear.
    pub estimator: String,
    pub kernel: String,
    pub h: Bandwidth,
    /// direct or batched.
    pub path: String,
    pub ridge: f64,
    /// Degree for the error-free local polynomial estimator.
    pub p: Option<u32>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            estimator: "deconv-kde".into(),
            kernel: "fp:r=2,s=2".into(),
            h: Bandwidth::default(),
            path: "direct".into(),
            ridge: deconv_core::regression::DEFAULT_RIDGE,
            p: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub h_min: f64,
    pub h_max: f64,
    pub h_points: usize,
    pub ise_lo: f64,
    pub ise_hi: f64,
    pub ise_points: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            h_min: 0.05,
            h_max: 2.5,
            h_points: 32,
            ise_lo: -8.0,
            ise_hi: 8.0,
            ise_points: 321,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSection {
    pub nodes: usize,
}

impl Default for QuadSection {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PceSection {
    pub k0: u32,
    /// Defaults to `1 / h`.
    pub ell: Option<f64>,
    /// Probe indices beyond `k0` on each side.
    pub extra_probes: u32,
}

impl Default for PceSection {
    fn default() -> Self {
        Self {
            k0: deconv_core::min_contrast::DEFAULT_K0,
            ell: None,
            extra_probes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub kernel: String,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            sizes: vec![250, 500, 1000, 2000, 4000, 8000],
            replicates: 40,
            kernel: "fp:r=2,s=2".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiuSection {
    pub t_max: f64,
    pub t_points: usize,
    /// Replicates per subject when simulating.
    pub m: usize,
}

impl Default for PhiuSection {
    fn default() -> Self {
        Self {
            t_max: 3.0,
            t_points: 61,
            m: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub scenario: Option<ScenarioConfig>,
    pub data: DataSection,
    pub estimate: EstimateSection,
    pub grid: GridSection,
    pub oracle: OracleSection,
    pub quad: QuadSection,
    pub pce: PceSection,
    pub rates: RatesSection,
    pub phiu: PhiuSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies `--preset` and `--seed`, then resolves the preset into an
    /// explicit scenario so the manifest shows every value used.
    pub fn resolve(mut self, preset: Option<&str>, seed: Option<u64>) -> anyhow::Result<Self> {
        if let Some(p) = preset {
            self.preset = Some(p.to_string());
            self.scenario = None;
        }
        if self.scenario.is_none() {
            if let Some(p) = &self.preset {
                self.scenario = Some(
                    ScenarioConfig::preset(p).map_err(|e| config_error(format!("preset: {e}")))?,
                );
            }
        }
        if let Some(s) = seed {
            if let Some(scn) = self.scenario.as_mut() {
                scn.seed = s;
            }
        }
        if self.quad.nodes % 2 == 0 || self.quad.nodes < deconv_core::quadrature::MIN_NODES {
            return Err(config_error(format!(
                "quad.nodes must be odd and at least {}, got {}",
                deconv_core::quadrature::MIN_NODES,
                self.quad.nodes
            )));
        }
        Ok(self)
    }

    pub fn require_scenario(&self, what: &str) -> anyhow::Result<&ScenarioConfig> {
        self.scenario.as_ref().ok_or_else(|| {
            config_error(format!("{what} needs a scenario: set `preset` or a [scenario] table"))
        })
    }
}

pub fn read_path(path: &Path, key: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(config_error(format!("{key}: file {} does not exist", path.display())));
    }
    Ok(())
}

pub fn with_key<T, E: std::fmt::Display>(r: Result<T, E>, key: &str) -> anyhow::Result<T> {
    r.map_err(|e| config_error(format!("{key}: {e}")))
}
