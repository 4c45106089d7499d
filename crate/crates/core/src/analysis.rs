//! Asymptotic bias and variance formulas, integrated squared error, oracle
//! bandwidths and convergence-rate experiments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deconv_kernel::DeconvKernelPlan;
use crate::density::{deconv_kde_batched, ContaminatedSample, CurveEstimate};
use crate::error::{DeconvError, Result};
use crate::error_models::{ErrorCf, ErrorFamily, ErrorModel};
use crate::kernels::{KernelOrder, KernelSpec};
use crate::quadrature::{linspace, logspace, trapezoid, DEFAULT_NODES};
use crate::simulation::{derive_seed, generate, quantile_sorted, Scenario};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Density of the latent variable in simulations, with closed-form `f''` and
/// characteristic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrueDensity {
    Gaussian { mean: f64, sd: f64 },
    Mixture(Vec<NormalComponent>),
    Uniform { a: f64, b: f64 },
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

impl TrueDensity {
    pub fn standard_normal() -> Self {
        TrueDensity::Gaussian { mean: 0.0, sd: 1.0 }
    }

    fn validate(self) -> Result<Self> {
        let ok = match &self {
            TrueDensity::Gaussian { mean, sd } => mean.is_finite() && *sd > 0.0 && sd.is_finite(),
            TrueDensity::Mixture(cs) => {
                !cs.is_empty()
                    && cs.iter().all(|c| c.weight > 0.0 && c.sd > 0.0 && c.mean.is_finite())
                    && (cs.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-9
            }
            TrueDensity::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
        };
        if ok {
            Ok(self)
        } else {
            Err(DeconvError::ConfigInvalid(format!("invalid density {self}")))
        }
    }

    fn components(&self) -> Vec<NormalComponent> {
        match self {
            TrueDensity::Gaussian { mean, sd } => vec![NormalComponent {
                weight: 1.0,
                mean: *mean,
                sd: *sd,
            }],
            TrueDensity::Mixture(cs) => cs.clone(),
            TrueDensity::Uniform { .. } => Vec::new(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            TrueDensity::Uniform { a, b } => {
                if x >= *a && x <= *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            _ => self
                .components()
                .iter()
                .map(|c| c.weight * normal_pdf((x - c.mean) / c.sd) / c.sd)
                .sum(),
        }
    }

    /// `f''(x)`; zero away from the jumps of a uniform density.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            TrueDensity::Uniform { .. } => 0.0,
            _ => self
                .components()
                .iter()
                .map(|c| {
                    let z = (x - c.mean) / c.sd;
                    c.weight * normal_pdf(z) * (z * z - 1.0) / c.sd.powi(3)
                })
                .sum(),
        }
    }

    pub fn cf(&self, t: f64) -> Complex64 {
        match self {
            TrueDensity::Uniform { a, b } => {
                if t == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    (Complex64::from_polar(1.0, t * b) - Complex64::from_polar(1.0, t * a))
                        / Complex64::new(0.0, t * (b - a))
                }
            }
            _ => self
                .components()
                .iter()
                .map(|c| Complex64::from_polar(c.weight * (-0.5 * (c.sd * t).powi(2)).exp(), c.mean * t))
                .sum(),
        }
    }

    /// `ln |phi_X(t)|^2`, exact for a single Gaussian even where the value
    /// underflows.
    pub fn ln_abs_cf_sq(&self, t: f64) -> f64 {
        match self {
            TrueDensity::Gaussian { sd, .. } => -(sd * t).powi(2),
            _ => self.cf(t).norm_sqr().ln(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            TrueDensity::Uniform { a, b } => 0.5 * (a + b),
            _ => self.components().iter().map(|c| c.weight * c.mean).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            TrueDensity::Uniform { a, b } => (b - a).powi(2) / 12.0,
            _ => {
                let m = self.mean();
                self.components()
                    .iter()
                    .map(|c| c.weight * (c.sd * c.sd + (c.mean - m).powi(2)))
                    .sum()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            TrueDensity::Uniform { a, b } => (0..n).map(|_| rng.random_range(*a..*b)).collect(),
            TrueDensity::Gaussian { mean, sd } => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + sd * z
                })
                .collect(),
            TrueDensity::Mixture(cs) => (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = cs[cs.len() - 1];
                    for c in cs {
                        acc += c.weight;
                        if u < acc {
                            pick = *c;
                            break;
                        }
                    }
                    let z: f64 = StandardNormal.sample(rng);
                    pick.mean + pick.sd * z
                })
                .collect(),
        }
    }
}

impl fmt::Display for TrueDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrueDensity::Gaussian { mean, sd } => write!(f, "normal:mean={mean},sd={sd}"),
            TrueDensity::Uniform { a, b } => write!(f, "uniform:a={a},b={b}"),
            TrueDensity::Mixture(cs) => {
                let parts: Vec<String> = cs
                    .iter()
                    .map(|c| format!("{},{},{}", c.weight, c.mean, c.sd))
                    .collect();
                write!(f, "mixture:{}", parts.join(";"))
            }
        }
    }
}

impl FromStr for TrueDensity {
    type Err = DeconvError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, body) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| DeconvError::Parse(format!("bad number {v:?} in {s:?}")))
        };
        let density = match name {
            "normal" | "gaussian" => {
                let (mut mean, mut sd) = (0.0, 1.0);
                for (k, v) in crate::parse_params(body)? {
                    match k.as_str() {
                        "mean" => mean = num(&v)?,
                        "sd" => sd = num(&v)?,
                        _ => return Err(DeconvError::Parse(format!("unknown key {k} in {s:?}"))),
                    }
                }
                TrueDensity::Gaussian { mean, sd }
            }
            "uniform" => {
                let (mut a, mut b) = (0.0, 1.0);
                for (k, v) in crate::parse_params(body)? {
                    match k.as_str() {
                        "a" => a = num(&v)?,
                        "b" => b = num(&v)?,
                        _ => return Err(DeconvError::Parse(format!("unknown key {k} in {s:?}"))),
                    }
                }
                TrueDensity::Uniform { a, b }
            }
            "mixture" => {
                let comps = body
                    .split(';')
                    .map(|part| {
                        let v: Vec<&str> = part.split(',').collect();
                        if v.len() != 3 {
                            return Err(DeconvError::Parse(format!(
                                "mixture component needs weight,mean,sd: {part:?}"
                            )));
                        }
                        Ok(NormalComponent {
                            weight: num(v[0])?,
                            mean: num(v[1])?,
                            sd: num(v[2])?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                TrueDensity::Mixture(comps)
            }
            _ => return Err(DeconvError::Parse(format!("unknown density {s:?}"))),
        };
        density.validate()
    }
}

impl TryFrom<String> for TrueDensity {
    type Error = DeconvError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrueDensity> for String {
    fn from(d: TrueDensity) -> Self {
        d.to_string()
    }
}

/// Composite Simpson rule with `intervals` (even) subintervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let step = (b - a) / m as f64;
    let mut sum = f(a) + f(b);
    for i in 1..m {
        sum += f(a + step * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * step / 3.0
}

const CONVOLUTION_INTERVALS: usize = 4000;

/// Density of `W = X + U` at `x`, by quadrature over the error law.
pub fn convolved_density(truth: &TrueDensity, error: &ErrorModel, x: f64) -> f64 {
    match error.family() {
        ErrorFamily::Degenerate => truth.pdf(x),
        ErrorFamily::Laplace { b } => {
            0.5 * simpson(
                |v| (-v).exp() * (truth.pdf(x - b * v) + truth.pdf(x + b * v)),
                0.0,
                40.0,
                CONVOLUTION_INTERVALS,
            )
        }
        ErrorFamily::Gaussian { sd } => simpson(
            |z| normal_pdf(z) * truth.pdf(x - sd * z),
            -12.0,
            12.0,
            CONVOLUTION_INTERVALS,
        ),
    }
}

fn kappa(kernel: &KernelSpec) -> Result<f64> {
    let m = kernel.moments()?;
    match m.order {
        KernelOrder::Second => Ok(m.kappa),
        _ => Err(DeconvError::UndefinedMoment(format!(
            "{kernel} is not a second-order kernel"
        ))),
    }
}

/// Leading bias term `h^2 kappa f''(x) / 2`.
pub fn theoretical_bias(truth: &TrueDensity, kernel: &KernelSpec, h: f64, x: f64) -> Result<f64> {
    Ok(0.5 * h * h * kappa(kernel)? * truth.second_derivative(x))
}

/// Leading variance term `f_W(x) / (2 pi n h) int phi_K(t)^2 / phi_U(t/h)^2 dt`.
pub fn theoretical_variance(
    f_w_at_x: f64,
    kernel: &KernelSpec,
    error: &ErrorModel,
    h: f64,
    n: usize,
) -> Result<f64> {
    if !(f_w_at_x >= 0.0) {
        return Err(DeconvError::ConfigInvalid(format!(
            "density value must be nonnegative, got {f_w_at_x}"
        )));
    }
    if !(h > 0.0) || n == 0 {
        return Err(DeconvError::ConfigInvalid("need h > 0 and n >= 1".into()));
    }
    let rule = kernel.rule(DEFAULT_NODES)?;
    let mut integral = 0.0;
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let phi_u = error.phi(t / h);
        if !(phi_u.abs() >= crate::deconv_kernel::VANISHING_THRESHOLD) {
            return Err(DeconvError::VanishingCharacteristicFunction { t: t / h, value: phi_u });
        }
        integral += w * (kernel.eval_phi(t) / phi_u).powi(2);
    }
    Ok(f_w_at_x / (2.0 * PI * n as f64 * h) * integral)
}

/// `bias^2 + variance` at `x` for each bandwidth.
pub fn theoretical_mse_profile(
    truth: &TrueDensity,
    kernel: &KernelSpec,
    error: &ErrorModel,
    n: usize,
    h_grid: &[f64],
    x: f64,
) -> Result<Vec<f64>> {
    let f_w = convolved_density(truth, error, x);
    h_grid
        .iter()
        .map(|&h| {
            let b = theoretical_bias(truth, kernel, h, x)?;
            Ok(b * b + theoretical_variance(f_w, kernel, error, h, n)?)
        })
        .collect()
}

/// Trapezoid integral of `(estimate - truth)^2` over the estimate's grid.
pub fn empirical_ise(est: &CurveEstimate, truth: &TrueDensity) -> Result<f64> {
    if est.grid().len() < 2 {
        return Err(DeconvError::GridMismatch("need at least two grid points".into()));
    }
    let sq: Vec<f64> = est
        .grid()
        .iter()
        .zip(est.values())
        .map(|(&x, &v)| (v - truth.pdf(x)).powi(2))
        .collect();
    Ok(trapezoid(est.grid(), &sq))
}

/// Integrated squared difference of two curves on the same grid.
pub fn ise_between(a: &CurveEstimate, b: &CurveEstimate) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(DeconvError::GridMismatch("curves are on different grids".into()));
    }
    let sq: Vec<f64> = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).powi(2)).collect();
    Ok(trapezoid(a.grid(), &sq))
}

/// Minimum number of bandwidths in an oracle search.
pub const MIN_ORACLE_GRID: usize = 20;

/// Bandwidths searched by default: 32 log-spaced values on `[0.05, 2.5]`.
pub fn default_h_grid() -> Vec<f64> {
    logspace(0.05, 2.5, 32)
}

/// Evaluation grid for integrated errors: `[-8, 8]` in steps of 0.05.
pub fn default_ise_grid() -> Vec<f64> {
    linspace(-8.0, 8.0, 321)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleChoice {
    pub h: f64,
    pub ise: f64,
    pub index: usize,
    /// `(h, ise)` for every bandwidth; failed fits carry `inf`.
    pub profile: Vec<(f64, f64)>,
}

/// Index of the smallest value; values within `1e-12` of the minimum count as
/// ties and the largest bandwidth among them wins.
pub fn select_oracle(h_grid: &[f64], ises: &[f64]) -> Result<usize> {
    if h_grid.len() != ises.len() || h_grid.is_empty() {
        return Err(DeconvError::GridMismatch("bandwidths and errors differ in length".into()));
    }
    let best = ises.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(DeconvError::NonFinite("no bandwidth produced a finite error".into()));
    }
    let mut pick: Option<usize> = None;
    for (i, v) in ises.iter().enumerate() {
        if *v - best <= 1e-12 && pick.is_none_or(|p| h_grid[i] > h_grid[p]) {
            pick = Some(i);
        }
    }
    Ok(pick.expect("finite minimum exists"))
}

fn check_h_grid(h_grid: &[f64]) -> Result<()> {
    if h_grid.len() < MIN_ORACLE_GRID {
        return Err(DeconvError::ConfigInvalid(format!(
            "oracle search needs at least {MIN_ORACLE_GRID} bandwidths, got {}",
            h_grid.len()
        )));
    }
    if h_grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(DeconvError::ConfigInvalid("bandwidths must be positive".into()));
    }
    Ok(())
}

/// Oracle search with an arbitrary estimator.
pub fn oracle_bandwidth_with(
    truth: &TrueDensity,
    h_grid: &[f64],
    estimate: impl Fn(f64) -> Result<CurveEstimate>,
) -> Result<OracleChoice> {
    check_h_grid(h_grid)?;
    let ises: Vec<f64> = h_grid
        .iter()
        .map(|&h| match estimate(h).and_then(|e| empirical_ise(&e, truth)) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                log::debug!("bandwidth {h} skipped: {e}");
                f64::INFINITY
            }
        })
        .collect();
    let index = select_oracle(h_grid, &ises)?;
    Ok(OracleChoice {
        h: h_grid[index],
        ise: ises[index],
        index,
        profile: h_grid.iter().copied().zip(ises).collect(),
    })
}

/// Bandwidth minimizing the ISE of the deconvolution estimator against the
/// known truth.
pub fn oracle_bandwidth(
    sample: &ContaminatedSample,
    truth: &TrueDensity,
    kernel: KernelSpec,
    error: impl Into<ErrorCf>,
    h_grid: &[f64],
    grid: &[f64],
) -> Result<OracleChoice> {
    let error = error.into();
    oracle_bandwidth_with(truth, h_grid, |h| {
        let plan = DeconvKernelPlan::new(kernel, error.clone(), h)?;
        deconv_kde_batched(sample, &plan, grid)
    })
}

const PROXY_NODES: usize = 20001;

/// `ln` of the integrated squared bias proxy
/// `(1/2 pi) int |phi_X(t)|^2 (phi_K(h t) - 1)^2 dt`, computed in the log
/// domain so that super-exponentially small values stay representable.
pub fn ln_bias_proxy(truth: &TrueDensity, kernel: &KernelSpec, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DeconvError::ConfigInvalid(format!("bandwidth must be positive, got {h}")));
    }
    let edge = kernel.support_phi() / h;
    let windows = [
        (0.0, edge),
        (edge, edge + 1.0),
        (edge + 1.0, edge + 10.0),
        (edge + 10.0, edge + 1000.0),
    ];
    let mut terms = Vec::with_capacity(PROXY_NODES * windows.len());
    for (a, b) in windows {
        let step = (b - a) / (PROXY_NODES - 1) as f64;
        for i in 0..PROXY_NODES {
            let t = a + step * i as f64;
            let gap = (kernel.eval_phi(h * t) - 1.0).abs();
            if gap == 0.0 {
                continue;
            }
            let w = if i == 0 || i == PROXY_NODES - 1 { 0.5 * step } else { step };
            terms.push(w.ln() + truth.ln_abs_cf_sq(t) + 2.0 * gap.ln());
        }
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = terms.iter().map(|v| (v - top).exp()).sum();
    // both half-lines, divided by 2 pi
    Ok(top + sum.ln() + 2f64.ln() - (2.0 * PI).ln())
}

/// Ratios `B(h_i) / B(h_{i+1})` of the bias proxy over consecutive bandwidths.
pub fn bias_proxy_ratios(truth: &TrueDensity, kernel: &KernelSpec, hs: &[f64]) -> Result<Vec<f64>> {
    let ln: Vec<f64> = hs
        .iter()
        .map(|&h| ln_bias_proxy(truth, kernel, h))
        .collect::<Result<_>>()?;
    Ok(ln.windows(2).map(|w| (w[0] - w[1]).exp()).collect())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub truth: TrueDensity,
    pub error: ErrorModel,
    pub kernel: KernelSpec,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub h_grid: Vec<f64>,
    pub grid: Vec<f64>,
}

impl RateExperiment {
    pub fn new(
        truth: TrueDensity,
        error: ErrorModel,
        kernel: KernelSpec,
        sizes: Vec<usize>,
        replicates: usize,
        seed: u64,
    ) -> Self {
        Self {
            truth,
            error,
            kernel,
            sizes,
            replicates,
            seed,
            h_grid: default_h_grid(),
            grid: default_ise_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 3 {
            return Err(DeconvError::ConfigInvalid(format!(
                "need at least 3 sample sizes, got {}",
                self.sizes.len()
            )));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DeconvError::ConfigInvalid(
                "sample sizes must be positive and strictly increasing".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(DeconvError::ConfigInvalid("replicates must be positive".into()));
        }
        if self.replicates < 20 {
            log::warn!("only {} replicates per size; slopes will be noisy", self.replicates);
        }
        check_h_grid(&self.h_grid)
    }

    /// Seed of replicate `r` at size `n`.
    pub fn replicate_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(derive_seed(self.seed, n as u64), r as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub median_ise: f64,
    pub q25: f64,
    pub q75: f64,
    pub ises: Vec<f64>,
    pub oracle_h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
}

fn median_slope(sizes: &[usize], medians: &[f64]) -> f64 {
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    ols_slope(&x, &y)
}

fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Percentile interval (2.5%, 97.5%) of the slope, resampling replicates
/// within each size.
pub fn bootstrap_slope_ci(rows: &[RateRow], resamples: usize, seed: u64) -> (f64, f64) {
    let sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0xB007));
    let mut slopes: Vec<f64> = (0..resamples)
        .map(|_| {
            let medians: Vec<f64> = rows
                .iter()
                .map(|row| {
                    let k = row.ises.len();
                    let draw: Vec<f64> =
                        (0..k).map(|_| row.ises[rng.random_range(0..k)]).collect();
                    median(&draw)
                })
                .collect();
            median_slope(&sizes, &medians)
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    (quantile_sorted(&slopes, 0.025), quantile_sorted(&slopes, 0.975))
}

/// Median oracle ISE per size and its log-log slope in `n`.
pub fn rate_experiment(exp: &RateExperiment) -> Result<RateResult> {
    exp.validate()?;
    let jobs: Vec<(usize, usize)> = exp
        .sizes
        .iter()
        .flat_map(|&n| (0..exp.replicates).map(move |r| (n, r)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let scn = Scenario::density(exp.truth.clone(), exp.error, n, exp.replicate_seed(n, r));
            let sample = generate(&scn)?;
            let choice =
                oracle_bandwidth(&sample, &exp.truth, exp.kernel, exp.error, &exp.h_grid, &exp.grid)?;
            Ok((choice.ise, choice.h))
        })
        .collect();
    let mut rows = Vec::with_capacity(exp.sizes.len());
    for (i, &n) in exp.sizes.iter().enumerate() {
        let chunk = &results[i * exp.replicates..(i + 1) * exp.replicates];
        let mut ises = Vec::with_capacity(exp.replicates);
        let mut hs = Vec::with_capacity(exp.replicates);
        for res in chunk {
            match res {
                Ok((ise, h)) => {
                    ises.push(*ise);
                    hs.push(*h);
                }
                Err(e) => log::warn!("replicate at n = {n} failed: {e}"),
            }
        }
        if ises.is_empty() {
            return Err(DeconvError::NonFinite(format!("every replicate failed at n = {n}")));
        }
        let mut sorted = ises.clone();
        sorted.sort_by(f64::total_cmp);
        rows.push(RateRow {
            n,
            median_ise: quantile_sorted(&sorted, 0.5),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
            ises,
            oracle_h: hs,
        });
    }
    let medians: Vec<f64> = rows.iter().map(|r| r.median_ise).collect();
    let slope = median_slope(&exp.sizes, &medians);
    let slope_ci = bootstrap_slope_ci(&rows, BOOTSTRAP_RESAMPLES, exp.seed);
    Ok(RateResult {
        rows,
        slope,
        slope_ci,
    })
}
