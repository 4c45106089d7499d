//! Seeded data generation for the classical, regression and Berkson models,
//! and Monte Carlo replication.
//!
//! Every random stream is a ChaCha20 generator keyed by the scenario seed and
//! selected by role, so draws for `X`, `U` and `V` never depend on each other
//! or on the order replicates run in.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TrueDensity;
use crate::density::{ContaminatedSample, ModelTag};
use crate::error::{DeconvError, Result};
use crate::error_models::{ErrorModel, ErrorSpec, ReplicatedSample};

const STREAM_X: u64 = 0;
const STREAM_U: u64 = 1;
const STREAM_V: u64 = 2;
const STREAM_REPLICATE_BASE: u64 = 16;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` derived from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn role_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Closed-form regression function `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RegressionFn {
    /// `a + b x`
    Linear { a: f64, b: f64 },
    /// `x^2`
    Square,
    /// `sin(freq x)`
    Sin { freq: f64 },
}

impl RegressionFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RegressionFn::Linear { a, b } => a + b * x,
            RegressionFn::Square => x * x,
            RegressionFn::Sin { freq } => (freq * x).sin(),
        }
    }
}

impl fmt::Display for RegressionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressionFn::Linear { a, b } => write!(f, "linear:a={a},b={b}"),
            RegressionFn::Square => write!(f, "square"),
            RegressionFn::Sin { freq } => write!(f, "sin:freq={freq}"),
        }
    }
}

impl FromStr for RegressionFn {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, body) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let params = crate::parse_params(body)?;
        let get = |key: &str, default: f64| -> Result<f64> {
            match params.iter().find(|(k, _)| k == key) {
                Some((_, v)) => v
                    .parse()
                    .map_err(|_| DeconvError::Parse(format!("bad value for {key} in {s:?}"))),
                None => Ok(default),
            }
        };
        match name {
            "linear" => Ok(RegressionFn::Linear {
                a: get("a", 0.0)?,
                b: get("b", 1.0)?,
            }),
            "square" => Ok(RegressionFn::Square),
            "sin" => Ok(RegressionFn::Sin {
                freq: get("freq", 1.0)?,
            }),
            _ => Err(DeconvError::Parse(format!("unknown regression function {s:?}"))),
        }
    }
}

impl TryFrom<String> for RegressionFn {
    type Error = DeconvError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RegressionFn> for String {
    fn from(g: RegressionFn) -> Self {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioModel {
    /// `W = X + U`
    Density,
    /// `W = X + U`, `Y = g(X) + V`
    Regression,
    /// `X = W + U`, `Y = g(X) + V`
    Berkson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Law of `X`, or of `W` under the Berkson model.
    pub truth: TrueDensity,
    pub error: ErrorModel,
    pub regression_g: Option<RegressionFn>,
    pub v_noise: Option<f64>,
    pub n: usize,
    pub model: ScenarioModel,
    pub seed: u64,
}

impl Scenario {
    pub fn density(truth: TrueDensity, error: ErrorModel, n: usize, seed: u64) -> Self {
        Self {
            truth,
            error,
            regression_g: None,
            v_noise: None,
            n,
            model: ScenarioModel::Density,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DeconvError::ConfigInvalid("sample size must be positive".into()));
        }
        let needs_g = self.model != ScenarioModel::Density;
        if needs_g != self.regression_g.is_some() {
            return Err(DeconvError::ConfigInvalid(format!(
                "regression function must be given exactly for regression and Berkson models (model {:?})",
                self.model
            )));
        }
        if !needs_g && self.v_noise.is_some() {
            return Err(DeconvError::ConfigInvalid(
                "response noise given for a density scenario".into(),
            ));
        }
        if let Some(sd) = self.v_noise {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(DeconvError::ConfigInvalid(format!("bad response noise sd {sd}")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

/// Draws one sample.
pub fn generate(scn: &Scenario) -> Result<ContaminatedSample> {
    scn.validate()?;
    let base = scn.truth.sample(scn.n, &mut role_rng(scn.seed, STREAM_X));
    let u = scn.error.sample(scn.n, &mut role_rng(scn.seed, STREAM_U));
    let responses = |x: &[f64]| -> Option<Vec<f64>> {
        let g = scn.regression_g?;
        let sd = scn.v_noise.unwrap_or(0.0);
        let v = ErrorModel::gaussian(sd)
            .map(|m| m.sample(x.len(), &mut role_rng(scn.seed, STREAM_V)))
            .unwrap_or_else(|_| vec![0.0; x.len()]);
        Some(x.iter().zip(v).map(|(&xi, vi)| g.eval(xi) + vi).collect())
    };
    match scn.model {
        ScenarioModel::Density | ScenarioModel::Regression => {
            let w = base.iter().zip(&u).map(|(x, u)| x + u).collect();
            let y = responses(&base);
            ContaminatedSample::new(w, y, Some(base), ModelTag::Classical)
        }
        ScenarioModel::Berkson => {
            let x: Vec<f64> = base.iter().zip(&u).map(|(w, u)| w + u).collect();
            let y = responses(&x);
            ContaminatedSample::new(base, y, Some(x), ModelTag::Berkson)
        }
    }
}

/// `m` replicate measurements `X_i + U_i^(j)` per subject.
pub fn generate_replicated(
    truth: &TrueDensity,
    error: &ErrorModel,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<ReplicatedSample> {
    if n == 0 {
        return Err(DeconvError::ConfigInvalid("sample size must be positive".into()));
    }
    let x = truth.sample(n, &mut role_rng(seed, STREAM_X));
    let columns: Vec<Vec<f64>> = (0..m as u64)
        .map(|j| error.sample(n, &mut role_rng(seed, STREAM_REPLICATE_BASE + j)))
        .collect();
    let rows = (0..n)
        .map(|i| columns.iter().map(|c| x[i] + c[i]).collect())
        .collect();
    ReplicatedSample::new(rows)
}

#[derive(Debug)]
pub struct ReplicateOutcome<T> {
    pub index: usize,
    pub seed: u64,
    pub result: Result<T>,
}

/// Runs `task` on `replicates` independent samples of `template`; replicate
/// `r` uses seed `derive_seed(template.seed, r)`. Failures are kept per
/// replicate.
pub fn monte_carlo<T, F>(
    template: &Scenario,
    replicates: usize,
    task: F,
) -> Result<Vec<ReplicateOutcome<T>>>
where
    T: Send,
    F: Fn(&ContaminatedSample) -> Result<T> + Sync,
{
    if replicates == 0 {
        return Err(DeconvError::ConfigInvalid("at least one replicate is required".into()));
    }
    template.validate()?;
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(template.seed, r as u64);
            let result = generate(&template.with_seed(seed)).and_then(|s| task(&s));
            ReplicateOutcome {
                index: r,
                seed,
                result,
            }
        })
        .collect())
}

/// Successful results in replicate order; the number of failures is logged.
pub fn successes<T>(outcomes: Vec<ReplicateOutcome<T>>) -> Vec<T> {
    let total = outcomes.len();
    let ok: Vec<T> = outcomes.into_iter().filter_map(|o| o.result.ok()).collect();
    if ok.len() < total {
        log::warn!("{} of {} replicates failed", total - ok.len(), total);
    }
    ok
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(DeconvError::EmptySample);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            count: values.len(),
            mean,
            sd,
            se: sd / n.sqrt(),
            median: quantile_sorted(&sorted, 0.5),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Text form of a scenario, as stored in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub truth: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_noise: Option<f64>,
    pub n: usize,
    pub model: ScenarioModel,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<Scenario> {
        let truth: TrueDensity = self.truth.parse()?;
        let spec: ErrorSpec = self.error.parse()?;
        let error = spec.resolve(Some(truth.variance()))?;
        let regression_g = self.g.as_deref().map(str::parse).transpose()?;
        let scn = Scenario {
            truth,
            error,
            regression_g,
            v_noise: self.v_noise,
            n: self.n,
            model: self.model,
            seed: self.seed,
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let base = |error: &str, n: usize, seed: u64| ScenarioConfig {
            truth: "normal:mean=0,sd=1".into(),
            error: error.into(),
            g: None,
            v_noise: None,
            n,
            model: ScenarioModel::Density,
            seed,
        };
        Ok(match name {
            "fig31" => base("laplace:varratio=0.1", 100, 31),
            "fig31-n1000" => base("laplace:varratio=0.1", 1000, 31),
            "degenerate" => base("none", 100, 7),
            "rates" => base("laplace:b=1", 1000, 2024),
            "regression" => ScenarioConfig {
                g: Some("sin:freq=1.5".into()),
                v_noise: Some(0.2),
                model: ScenarioModel::Regression,
                ..base("laplace:varratio=0.1", 500, 12)
            },
            "berkson" => ScenarioConfig {
                g: Some("square".into()),
                v_noise: Some(0.2),
                model: ScenarioModel::Berkson,
                ..base("laplace:varratio=0.1", 500, 13)
            },
            _ => {
                return Err(DeconvError::ConfigInvalid(format!(
                    "unknown preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }
}

pub const PRESETS: &[&str] = &["fig31", "fig31-n1000", "degenerate", "rates", "regression", "berkson"];
