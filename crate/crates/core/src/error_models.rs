//! Measurement-error distributions and the replicate-based estimator of
//! `|phi_U|`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorFamily {
    /// Density `exp(-|u| / b) / (2b)`.
    Laplace { b: f64 },
    Gaussian { sd: f64 },
    /// No measurement error.
    Degenerate,
}

/// Polynomial lower bound `|phi_U(t)| >= c (1 + |t|)^-alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailClass {
    pub c: f64,
    pub alpha: f64,
}

/// A symmetric error law with a characteristic function that has no real zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    family: ErrorFamily,
}

impl ErrorModel {
    pub fn laplace(b: f64) -> Result<Self> {
        positive("laplace scale b", b)?;
        Ok(Self {
            family: ErrorFamily::Laplace { b },
        })
    }

    pub fn gaussian(sd: f64) -> Result<Self> {
        positive("gaussian sd", sd)?;
        Ok(Self {
            family: ErrorFamily::Gaussian { sd },
        })
    }

    pub const fn none() -> Self {
        Self {
            family: ErrorFamily::Degenerate,
        }
    }

    pub fn family(&self) -> ErrorFamily {
        self.family
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.family, ErrorFamily::Degenerate)
    }

    /// Characteristic function, real and even.
    pub fn phi(&self, t: f64) -> f64 {
        match self.family {
            ErrorFamily::Laplace { b } => 1.0 / (1.0 + b * b * t * t),
            ErrorFamily::Gaussian { sd } => (-0.5 * sd * sd * t * t).exp(),
            ErrorFamily::Degenerate => 1.0,
        }
    }

    /// Density of `U`; `None` for the point mass at zero.
    pub fn density(&self, u: f64) -> Option<f64> {
        match self.family {
            ErrorFamily::Laplace { b } => Some((-u.abs() / b).exp() / (2.0 * b)),
            ErrorFamily::Gaussian { sd } => {
                Some((-0.5 * (u / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            }
            ErrorFamily::Degenerate => None,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            ErrorFamily::Laplace { b } => 2.0 * b * b,
            ErrorFamily::Gaussian { sd } => sd * sd,
            ErrorFamily::Degenerate => 0.0,
        }
    }

    /// Tail class, or `None` for supersmooth (Gaussian) errors.
    ///
    /// For Laplace, `(1 + t)^2 / (1 + b^2 t^2)` attains its infimum over
    /// `t >= 0` either at `t = 0` or as `t -> inf`, giving `c = min(1, b^-2)`.
    pub fn tail(&self) -> Option<TailClass> {
        match self.family {
            ErrorFamily::Laplace { b } => Some(TailClass {
                c: (1.0f64).min(1.0 / (b * b)),
                alpha: 2.0,
            }),
            ErrorFamily::Gaussian { .. } => None,
            ErrorFamily::Degenerate => Some(TailClass { c: 1.0, alpha: 0.0 }),
        }
    }

    /// `n` independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self.family {
            ErrorFamily::Laplace { b } => (0..n)
                .map(|_| {
                    let e1: f64 = Exp1.sample(rng);
                    let e2: f64 = Exp1.sample(rng);
                    b * (e1 - e2)
                })
                .collect(),
            ErrorFamily::Gaussian { sd } => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sd * z
                })
                .collect(),
            ErrorFamily::Degenerate => vec![0.0; n],
        }
    }
}

impl fmt::Display for ErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            ErrorFamily::Laplace { b } => write!(f, "laplace:b={b}"),
            ErrorFamily::Gaussian { sd } => write!(f, "gaussian:sd={sd}"),
            ErrorFamily::Degenerate => write!(f, "none"),
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DeconvError::ConfigInvalid(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

/// Error model as written in configuration, before a variance ratio is
/// resolved against the law of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ErrorSpec {
    Laplace { b: f64 },
    LaplaceVarRatio(f64),
    Gaussian { sd: f64 },
    GaussianVarRatio(f64),
    None,
}

impl ErrorSpec {
    /// Resolves to a concrete model; `var_x` is needed only for variance
    /// ratios, where `var(U) = ratio * var(X)`.
    pub fn resolve(&self, var_x: Option<f64>) -> Result<ErrorModel> {
        let need_var = || {
            var_x.ok_or_else(|| {
                DeconvError::ConfigInvalid(
                    "a variance ratio needs a scenario with a known law of X".into(),
                )
            })
        };
        match *self {
            ErrorSpec::Laplace { b } => ErrorModel::laplace(b),
            ErrorSpec::Gaussian { sd } => ErrorModel::gaussian(sd),
            ErrorSpec::None => Ok(ErrorModel::none()),
            ErrorSpec::LaplaceVarRatio(rho) => {
                ErrorModel::laplace((rho * need_var()? / 2.0).sqrt())
            }
            ErrorSpec::GaussianVarRatio(rho) => ErrorModel::gaussian((rho * need_var()?).sqrt()),
        }
    }
}

impl From<ErrorModel> for ErrorSpec {
    fn from(m: ErrorModel) -> Self {
        match m.family {
            ErrorFamily::Laplace { b } => ErrorSpec::Laplace { b },
            ErrorFamily::Gaussian { sd } => ErrorSpec::Gaussian { sd },
            ErrorFamily::Degenerate => ErrorSpec::None,
        }
    }
}

impl fmt::Display for ErrorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorSpec::Laplace { b } => write!(f, "laplace:b={b}"),
            ErrorSpec::LaplaceVarRatio(r) => write!(f, "laplace:varratio={r}"),
            ErrorSpec::Gaussian { sd } => write!(f, "gaussian:sd={sd}"),
            ErrorSpec::GaussianVarRatio(r) => write!(f, "gaussian:varratio={r}"),
            ErrorSpec::None => write!(f, "none"),
        }
    }
}

impl FromStr for ErrorSpec {
    type Err = DeconvError;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("none") {
            return Ok(ErrorSpec::None);
        }
        let (family, body) = text
            .split_once(':')
            .ok_or_else(|| DeconvError::Parse(format!("unknown error model '{text}'")))?;
        let params = crate::parse_params(body)?;
        let [(key, value)] = params.as_slice() else {
            return Err(DeconvError::Parse(format!(
                "error model '{text}' takes exactly one parameter"
            )));
        };
        let v: f64 = value
            .parse()
            .map_err(|e| DeconvError::Parse(format!("error model '{text}': {e}")))?;
        match (family, key.as_str()) {
            ("laplace", "b") => Ok(ErrorSpec::Laplace { b: v }),
            ("laplace", "varratio") => Ok(ErrorSpec::LaplaceVarRatio(v)),
            ("gaussian", "sd") => Ok(ErrorSpec::Gaussian { sd: v }),
            ("gaussian", "varratio") => Ok(ErrorSpec::GaussianVarRatio(v)),
            _ => Err(DeconvError::Parse(format!("unknown error model '{text}'"))),
        }
    }
}

impl TryFrom<String> for ErrorSpec {
    type Error = DeconvError;
    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<ErrorSpec> for String {
    fn from(value: ErrorSpec) -> Self {
        value.to_string()
    }
}

/// `|phi_U|` tabulated on a nonnegative increasing grid, linearly
/// interpolated in `|t|` and held constant beyond the last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedCf {
    t: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedCf {
    pub fn new(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if t.len() != values.len() || t.len() < 2 {
            return Err(DeconvError::ConfigInvalid(
                "tabulated characteristic function needs >= 2 matching nodes".into(),
            ));
        }
        if t[0] != 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DeconvError::ConfigInvalid(
                "tabulated characteristic function grid must start at 0 and increase".into(),
            ));
        }
        Ok(Self { t, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        let last = self.t.len() - 1;
        if a >= self.t[last] {
            return self.values[last];
        }
        let i = self.t.partition_point(|&x| x <= a) - 1;
        let w = (a - self.t[i]) / (self.t[i + 1] - self.t[i]);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Characteristic function used to build a deconvolution kernel: either a
/// known model or an estimate from replicates.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorCf {
    Known(ErrorModel),
    Estimated(TabulatedCf),
}

impl ErrorCf {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ErrorCf::Known(m) => m.phi(t),
            ErrorCf::Estimated(tab) => tab.eval(t),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ErrorCf::Known(m) => m.to_string(),
            ErrorCf::Estimated(_) => "estimated".into(),
        }
    }
}

impl From<ErrorModel> for ErrorCf {
    fn from(m: ErrorModel) -> Self {
        ErrorCf::Known(m)
    }
}

/// Repeated measurements `W^(j) = X + U^(j)`, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedSample {
    rows: Vec<Vec<f64>>,
    m: usize,
}

impl ReplicatedSample {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map(Vec::len).ok_or(DeconvError::EmptySample)?;
        if rows.iter().any(|r| r.len() != m) {
            return Err(DeconvError::ConfigInvalid(
                "replicate rows must share one arity".into(),
            ));
        }
        if m < 2 {
            return Err(DeconvError::InsufficientReplicates(m));
        }
        Ok(Self { rows, m })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn replicates(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Estimates `|phi_U(t)|` from the first two replicates.
///
/// `W^(1) - W^(2) = U^(1) - U^(2)` has characteristic function `|phi_U|^2`,
/// estimated by the empirical mean of `cos(t (W^(1) - W^(2)))`. The estimate
/// is floored at `n^-1/2` before the square root.
pub fn estimate_abs_phi_u(data: &ReplicatedSample, t_grid: &[f64]) -> Result<Vec<f64>> {
    if data.m < 2 {
        return Err(DeconvError::InsufficientReplicates(data.m));
    }
    let n = data.len() as f64;
    let floor = n.powf(-0.5);
    let diffs: Vec<f64> = data.rows.iter().map(|r| r[0] - r[1]).collect();
    Ok(t_grid
        .iter()
        .map(|&t| {
            let d = diffs.iter().map(|&d| (t * d).cos()).sum::<f64>() / n;
            d.max(floor).sqrt()
        })
        .collect())
}
