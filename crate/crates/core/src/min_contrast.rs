//! Minimum contrast density estimator on the dilated sinc basis
//! `L_k(x) = ell^{1/2} L(ell x - k)`, and a checker for its agreement with the
//! sinc-kernel deconvolution estimator at `x = k / ell`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::deconv_kernel::DeconvKernelPlan;
use crate::density::{deconv_kde, validate_grid, ContaminatedSample, CurveEstimate, CurveMeta};
use crate::error::{DeconvError, Result};
use crate::error_models::ErrorCf;
use crate::kernels::{sinc, KernelSpec};
use crate::quadrature::DEFAULT_NODES;

pub const DEFAULT_K0: u32 = 255;

/// Tolerance for agreement at the interior grid points.
pub const THEOREM_TOLERANCE: f64 = 1e-8;

/// Tuning pair `(k0, ell)`; the matching bandwidth is always `1 / ell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PceConfig {
    pub k0: u32,
    pub ell: f64,
    #[serde(default = "default_nodes")]
    pub n_quad: usize,
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

impl PceConfig {
    pub fn new(k0: u32, ell: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(DeconvError::ConfigInvalid(format!("ell must be positive, got {ell}")));
        }
        if k0 == 0 {
            return Err(DeconvError::ConfigInvalid("k0 must be positive".into()));
        }
        Ok(Self {
            k0,
            ell,
            n_quad: DEFAULT_NODES,
        })
    }

    /// `k0 = 2^m - 1`.
    pub fn with_m(m: u32, ell: f64) -> Result<Self> {
        if m == 0 || m > 31 {
            return Err(DeconvError::ConfigInvalid(format!("m must lie in 1..=31, got {m}")));
        }
        Self::new((1u32 << m) - 1, ell)
    }

    /// Default `k0` with `ell = 1 / h`.
    pub fn from_bandwidth(h: f64) -> Result<Self> {
        Self::new(DEFAULT_K0, 1.0 / h)
    }

    pub fn bandwidth(&self) -> f64 {
        1.0 / self.ell
    }

    /// The sinc deconvolution plan shared by the coefficients and by the
    /// kernel estimator it is compared with.
    pub fn plan(&self, error: impl Into<ErrorCf>) -> Result<DeconvKernelPlan> {
        DeconvKernelPlan::with_order(KernelSpec::sinc(), error, self.bandwidth(), self.n_quad, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PceEstimate {
    /// `a_hat[j]` is the coefficient of index `k = j - k0`.
    pub a_hat: Vec<f64>,
    pub config: PceConfig,
    pub curve: CurveEstimate,
    /// Largest imaginary part left by the complex quadrature.
    pub imag_residual: f64,
}

impl PceEstimate {
    pub fn coefficient(&self, k: i64) -> Result<f64> {
        check_index(k, self.config.k0)?;
        Ok(self.a_hat[(k + self.config.k0 as i64) as usize])
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        let k0 = self.config.k0 as i64;
        -k0..=k0
    }

    /// `sum_k a_k ell^{1/2} L(ell x - k)`.
    pub fn eval(&self, x: f64) -> f64 {
        synthesize(&self.a_hat, &self.config, x)
    }
}

fn check_index(k: i64, k0: u32) -> Result<()> {
    if k.unsigned_abs() > k0 as u64 {
        Err(DeconvError::IndexOutOfRange { k, k0 })
    } else {
        Ok(())
    }
}

fn synthesize(a_hat: &[f64], cfg: &PceConfig, x: f64) -> f64 {
    let k0 = cfg.k0 as i64;
    let lx = cfg.ell * x;
    let sum: f64 = a_hat
        .iter()
        .enumerate()
        .map(|(j, a)| a * sinc(lx - (j as i64 - k0) as f64))
        .sum();
    sum * cfg.ell.sqrt()
}

/// Empirical characteristic function of `W` at `ell * u` for every node `u`
/// of the plan's rule.
fn ecf_at_nodes(plan: &DeconvKernelPlan, w: &[f64], ell: f64) -> Vec<Complex64> {
    let n = w.len() as f64;
    plan.rule()
        .nodes()
        .par_iter()
        .map(|&u| {
            let s = ell * u;
            w.iter().map(|&wj| Complex64::from_polar(1.0, s * wj)).sum::<Complex64>() / n
        })
        .collect()
}

fn coefficient_complex(
    plan: &DeconvKernelPlan,
    ecf: &[Complex64],
    ell: f64,
    k: i64,
) -> Complex64 {
    let rule = plan.rule();
    let mut acc = Complex64::new(0.0, 0.0);
    for (((&u, &wt), &psi), &e) in rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .zip(plan.node_values())
        .zip(ecf)
    {
        acc += Complex64::from_polar(wt * psi, -u * k as f64) * e;
    }
    acc * ell.sqrt() / (2.0 * PI)
}

/// Single coefficient `a_hat_k`, `|k| <= k0`.
pub fn a_hat(
    sample: &ContaminatedSample,
    error: impl Into<ErrorCf>,
    cfg: &PceConfig,
    k: i64,
) -> Result<f64> {
    check_index(k, cfg.k0)?;
    sample.require_classical()?;
    let plan = cfg.plan(error)?;
    let ecf = ecf_at_nodes(&plan, sample.w(), cfg.ell);
    Ok(coefficient_complex(&plan, &ecf, cfg.ell, k).re)
}

/// All `2 k0 + 1` coefficients and the curve on `grid`.
pub fn pce_estimate(
    sample: &ContaminatedSample,
    error: impl Into<ErrorCf>,
    cfg: &PceConfig,
    grid: &[f64],
) -> Result<PceEstimate> {
    let reach = cfg.k0 as f64 / cfg.ell;
    let widest = grid.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if reach < widest {
        log::warn!(
            "k0 / ell = {reach} is inside the grid (max |x| = {widest}); the estimate is zero beyond it"
        );
    }
    pce_on_grid(sample, error.into(), cfg, grid)
}

fn pce_on_grid(
    sample: &ContaminatedSample,
    error: ErrorCf,
    cfg: &PceConfig,
    grid: &[f64],
) -> Result<PceEstimate> {
    sample.require_classical()?;
    validate_grid(grid)?;
    let plan = cfg.plan(error)?;
    let ecf = ecf_at_nodes(&plan, sample.w(), cfg.ell);
    let k0 = cfg.k0 as i64;
    let complex: Vec<Complex64> = (-k0..=k0)
        .into_par_iter()
        .map(|k| coefficient_complex(&plan, &ecf, cfg.ell, k))
        .collect();
    let imag_residual = complex.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    let a_hat: Vec<f64> = complex.iter().map(|c| c.re).collect();
    if a_hat.iter().any(|a| !a.is_finite()) {
        return Err(DeconvError::NonFinite("minimum contrast coefficients".into()));
    }
    let values = grid.par_iter().map(|&x| synthesize(&a_hat, cfg, x)).collect();
    let curve = CurveEstimate::new(
        grid.to_vec(),
        values,
        CurveMeta {
            estimator: "min-contrast".into(),
            kernel: KernelSpec::sinc().to_string(),
            error: plan.error().name(),
            h: cfg.bandwidth(),
            n: sample.len(),
            ..CurveMeta::default()
        },
    )?;
    Ok(PceEstimate {
        a_hat,
        config: *cfg,
        curve,
        imag_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub k0: u32,
    pub ell: f64,
    pub inside_probes: usize,
    pub outside_probes: usize,
    /// `max |f_tilde(k/ell) - f_decon(k/ell)|` over `|k| <= k0`.
    pub inside_max_diff: f64,
    /// `max |f_tilde(k/ell)|` over `|k| > k0`.
    pub outside_max_abs: f64,
    pub imag_residual: f64,
    pub pass: bool,
}

/// Both estimators on the probe grid `k / ell`, with the agreement report.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremComparison {
    pub pce: PceEstimate,
    pub decon: CurveEstimate,
    pub report: TheoremReport,
}

/// Evaluates both estimators at `x = k / ell` for every probe `k`.
pub fn compare_on_probes(
    sample: &ContaminatedSample,
    error: impl Into<ErrorCf>,
    cfg: &PceConfig,
    probe_ks: &[i64],
) -> Result<TheoremComparison> {
    let error = error.into();
    let mut ks = probe_ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(DeconvError::ConfigInvalid("no probe indices".into()));
    }
    let grid: Vec<f64> = ks.iter().map(|&k| k as f64 / cfg.ell).collect();
    let pce = pce_on_grid(sample, error.clone(), cfg, &grid)?;
    let plan = cfg.plan(error)?;
    let decon = deconv_kde(sample, &plan, &grid)?;
    let (mut inside, mut outside) = (0usize, 0usize);
    let (mut inside_max, mut outside_max) = (0.0f64, 0.0f64);
    for ((&k, f_tilde), f_decon) in ks.iter().zip(pce.curve.values()).zip(decon.values()) {
        if k.unsigned_abs() <= cfg.k0 as u64 {
            inside += 1;
            inside_max = inside_max.max((f_tilde - f_decon).abs());
        } else {
            outside += 1;
            outside_max = outside_max.max(f_tilde.abs());
        }
    }
    let report = TheoremReport {
        k0: cfg.k0,
        ell: cfg.ell,
        inside_probes: inside,
        outside_probes: outside,
        inside_max_diff: inside_max,
        outside_max_abs: outside_max,
        imag_residual: pce.imag_residual,
        pass: inside_max <= THEOREM_TOLERANCE && outside_max <= THEOREM_TOLERANCE,
    };
    Ok(TheoremComparison { pce, decon, report })
}

/// Agreement report of the two estimators at `x = k / ell`.
pub fn verify_theorem(
    sample: &ContaminatedSample,
    error: impl Into<ErrorCf>,
    cfg: &PceConfig,
    probe_ks: &[i64],
) -> Result<TheoremReport> {
    Ok(compare_on_probes(sample, error, cfg, probe_ks)?.report)
}

/// `k` from `-k0 - extra` to `k0 + extra`.
pub fn default_probes(k0: u32, extra: u32) -> Vec<i64> {
    let r = (k0 + extra) as i64;
    (-r..=r).collect()
}
