//! Local polynomial regression, with deconvolution variants for covariates
//! measured with error.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deconv_kernel::{BatchedSum, DeconvKernelPlan};
use crate::density::{validate_grid, ContaminatedSample, CurveEstimate, CurveMeta, PointFlag};
use crate::error::{DeconvError, Result};
use crate::error_models::ErrorCf;
use crate::kernels::{KernelEvaluator, KernelSpec};
use crate::quadrature::DEFAULT_NODES;

/// Local systems with a larger condition number are reported singular.
pub const MAX_CONDITION: f64 = 1e12;

pub const DEFAULT_RIDGE: f64 = 1e-10;

/// How deconvolution sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPath {
    /// Direct quadrature per data point and grid point.
    #[default]
    Direct,
    /// Through the empirical characteristic function.
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// Degree of the local polynomial.
    pub p: u32,
    pub kernel: KernelSpec,
    pub h: f64,
    /// Relative Tikhonov term added to the diagonal of a local system whose
    /// condition number exceeds [`MAX_CONDITION`].
    pub ridge: f64,
    #[serde(default)]
    pub path: EvalPath,
}

impl RegressionConfig {
    pub fn new(p: u32, kernel: KernelSpec, h: f64) -> Self {
        Self {
            p,
            kernel,
            h,
            ridge: DEFAULT_RIDGE,
            path: EvalPath::Direct,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(DeconvError::ConfigInvalid(format!(
                "bandwidth must be positive, got {}",
                self.h
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(DeconvError::ConfigInvalid("ridge must be nonnegative".into()));
        }
        Ok(())
    }

    fn meta(&self, estimator: &str, error: String, n: usize) -> CurveMeta {
        CurveMeta {
            estimator: estimator.into(),
            kernel: self.kernel.to_string(),
            error,
            h: self.h,
            n,
            p: Some(self.p),
            ridge: Some(self.ridge),
            ..CurveMeta::default()
        }
    }
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(DeconvError::EmptySample);
    }
    if x.len() != y.len() {
        return Err(DeconvError::ConfigInvalid(format!(
            "{} covariates but {} responses",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Nadaraya-Watson ratio `sum Y_i K_i / sum K_i`.
pub fn local_constant(
    x: &[f64],
    y: &[f64],
    cfg: &RegressionConfig,
    grid: &[f64],
) -> Result<CurveEstimate> {
    let cfg = RegressionConfig { p: 0, ..*cfg };
    local_polynomial(x, y, &cfg, grid)
}

/// `c_0(x)` from the kernel-weighted least-squares fit of a degree-`p`
/// polynomial in `(X_i - x)`.
pub fn local_polynomial(
    x: &[f64],
    y: &[f64],
    cfg: &RegressionConfig,
    grid: &[f64],
) -> Result<CurveEstimate> {
    cfg.validate()?;
    let kernel = KernelEvaluator::new(cfg.kernel, DEFAULT_NODES)?;
    let (values, flags) =
        local_polynomial_weighted(x, y, grid, cfg.h, cfg.p, cfg.ridge, |u| kernel.eval(u))?;
    let name = if cfg.p == 0 { "local-constant" } else { "local-polynomial" };
    CurveEstimate::new(grid.to_vec(), values, cfg.meta(name, "none".into(), x.len()))?
        .with_flags(flags)
}

/// Local polynomial fit with an arbitrary weight function of `(x - X_i) / h`.
/// Flagged points carry the value 0.
pub fn local_polynomial_weighted(
    x: &[f64],
    y: &[f64],
    grid: &[f64],
    h: f64,
    p: u32,
    ridge: f64,
    weight: impl Fn(f64) -> f64 + Sync,
) -> Result<(Vec<f64>, Vec<PointFlag>)> {
    check_pairs(x, y)?;
    validate_grid(grid)?;
    let fits: Vec<(f64, PointFlag)> = grid
        .par_iter()
        .map(|&x0| {
            let k: Vec<f64> = x.iter().map(|&xi| weight((x0 - xi) / h)).collect();
            if p == 0 {
                ratio_fit(&k, y)
            } else {
                polynomial_fit(x, y, &k, x0, h, p, ridge)
            }
        })
        .collect();
    Ok(fits.into_iter().unzip())
}

fn ratio_fit(k: &[f64], y: &[f64]) -> (f64, PointFlag) {
    let den: f64 = k.iter().sum();
    let mass: f64 = k.iter().map(|v| v.abs()).sum();
    if mass == 0.0 || den.abs() <= 1e-12 * mass {
        return (0.0, PointFlag::EmptyNeighborhood);
    }
    let num: f64 = k.iter().zip(y).map(|(k, y)| k * y).sum();
    (num / den, PointFlag::Ok)
}

/// Weighted normal equations in `u = (X_i - x) / h`; `c_0` is invariant to
/// this rescaling of the polynomial basis.
fn polynomial_fit(
    x: &[f64],
    y: &[f64],
    k: &[f64],
    x0: f64,
    h: f64,
    p: u32,
    ridge: f64,
) -> (f64, PointFlag) {
    let dim = p as usize + 1;
    let mut moments = vec![0.0; 2 * dim - 1];
    let mut rhs = DVector::zeros(dim);
    for ((&xi, &yi), &ki) in x.iter().zip(y).zip(k) {
        let u = (xi - x0) / h;
        let mut pow = ki;
        for (j, m) in moments.iter_mut().enumerate() {
            if j < dim {
                rhs[j] += pow * yi;
            }
            *m += pow;
            pow *= u;
        }
    }
    let a = DMatrix::from_fn(dim, dim, |i, j| moments[i + j]);
    let scale = (0..dim).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return (0.0, PointFlag::EmptyNeighborhood);
    }
    // plain solve first; the ridge only rescues near-singular systems
    for lambda in [0.0, ridge * scale] {
        let mut m = a.clone();
        for i in 0..dim {
            m[(i, i)] += lambda;
        }
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin > 0.0 && smax / smin <= MAX_CONDITION {
            return match svd.solve(&rhs, 0.0) {
                Ok(c) if c[0].is_finite() => (c[0], PointFlag::Ok),
                _ => (0.0, PointFlag::SingularLocalFit),
            };
        }
        if ridge == 0.0 {
            break;
        }
    }
    (0.0, PointFlag::SingularLocalFit)
}

/// Closed-form local-linear estimate from the sums `S_r`, `T_r` (`r = 0, 1, 2`)
/// of `((x - X_i)/h)^r K((x - X_i)/h)`. As in the solved system, the ridge is
/// added to `S_0` and `S_2` only when the plain determinant is negligible.
pub fn local_linear_from_sums(s: [f64; 3], t: [f64; 2], ridge: f64) -> (f64, PointFlag) {
    let scale = s[0].abs().max(s[2].abs());
    if scale == 0.0 {
        return (0.0, PointFlag::EmptyNeighborhood);
    }
    for lambda in [0.0, ridge * scale] {
        let (s0, s2) = (s[0] + lambda, s[2] + lambda);
        let det = s0 * s2 - s[1] * s[1];
        let size = (s0 * s2).abs().max(s[1] * s[1]);
        if det.abs() > size / MAX_CONDITION {
            return ((s2 * t[0] - s[1] * t[1]) / det, PointFlag::Ok);
        }
        if ridge == 0.0 {
            break;
        }
    }
    (0.0, PointFlag::SingularLocalFit)
}

/// Error-free local linear estimator through the closed form.
pub fn local_linear_closed_form(
    x: &[f64],
    y: &[f64],
    cfg: &RegressionConfig,
    grid: &[f64],
) -> Result<CurveEstimate> {
    cfg.validate()?;
    check_pairs(x, y)?;
    validate_grid(grid)?;
    let kernel = KernelEvaluator::new(cfg.kernel, DEFAULT_NODES)?;
    let nh = x.len() as f64 * cfg.h;
    let (values, flags): (Vec<f64>, Vec<PointFlag>) = grid
        .par_iter()
        .map(|&x0| {
            let mut s = [0.0; 3];
            let mut t = [0.0; 2];
            for (&xi, &yi) in x.iter().zip(y) {
                let u = (x0 - xi) / cfg.h;
                let k = kernel.eval(u);
                s[0] += k;
                s[1] += u * k;
                s[2] += u * u * k;
                t[0] += yi * k;
                t[1] += yi * u * k;
            }
            s.iter_mut().for_each(|v| *v /= nh);
            t.iter_mut().for_each(|v| *v /= nh);
            local_linear_from_sums(s, t, cfg.ridge)
        })
        .unzip();
    CurveEstimate::new(grid.to_vec(), values, cfg.meta("local-linear", "none".into(), x.len()))?
        .with_flags(flags)
}

/// Local constant (`p = 0`) or local linear (`p = 1`) regression on
/// contaminated covariates: each `h^-r (x - X_i)^r K((x - X_i)/h)` is replaced
/// by `K_{U,r}((x - W_i)/h)`.
pub fn deconv_local_polynomial(
    sample: &ContaminatedSample,
    cfg: &RegressionConfig,
    error: impl Into<ErrorCf>,
    grid: &[f64],
) -> Result<CurveEstimate> {
    cfg.validate()?;
    sample.require_classical()?;
    let y = sample
        .y()
        .ok_or_else(|| DeconvError::ConfigInvalid("regression needs responses".into()))?;
    validate_grid(grid)?;
    if cfg.p > 1 {
        return Err(DeconvError::UnsupportedKernel(format!(
            "{} (deconvolution regression supports p <= 1, got {})",
            cfg.kernel, cfg.p
        )));
    }
    let error = error.into();
    let orders: &[u32] = if cfg.p == 0 { &[0] } else { &[0, 1, 2] };
    let plans = orders
        .iter()
        .map(|&r| DeconvKernelPlan::with_order(cfg.kernel, error.clone(), cfg.h, DEFAULT_NODES, r))
        .collect::<Result<Vec<_>>>()?;
    let w = sample.w();
    let nh = w.len() as f64 * cfg.h;

    // sums[r] = (S_r, T_r) at every grid point
    let sums: Vec<(Vec<f64>, Vec<f64>)> = match cfg.path {
        EvalPath::Direct => plans
            .iter()
            .map(|plan| {
                grid.par_iter()
                    .map(|&x0| {
                        let mut s = 0.0;
                        let mut t = 0.0;
                        for (&wi, &yi) in w.iter().zip(y) {
                            let k = plan.eval((x0 - wi) / cfg.h);
                            s += k;
                            t += yi * k;
                        }
                        (s / nh, t / nh)
                    })
                    .unzip()
            })
            .collect(),
        EvalPath::Batched => plans
            .iter()
            .map(|plan| {
                let s = BatchedSum::new(plan, w, None)?;
                let t = BatchedSum::new(plan, w, Some(y))?;
                Ok((s.eval_many(grid), t.eval_many(grid)))
            })
            .collect::<Result<_>>()?,
    };

    let (values, flags): (Vec<f64>, Vec<PointFlag>) = (0..grid.len())
        .map(|j| {
            if cfg.p == 0 {
                let (s0, t0) = (sums[0].0[j], sums[0].1[j]);
                if s0 == 0.0 {
                    (0.0, PointFlag::EmptyNeighborhood)
                } else {
                    (t0 / s0, PointFlag::Ok)
                }
            } else {
                local_linear_from_sums(
                    [sums[0].0[j], sums[1].0[j], sums[2].0[j]],
                    [sums[0].1[j], sums[1].1[j]],
                    cfg.ridge,
                )
            }
        })
        .unzip();
    let name = if cfg.p == 0 {
        "deconv-local-constant"
    } else {
        "deconv-local-linear"
    };
    CurveEstimate::new(grid.to_vec(), values, cfg.meta(name, error.name(), w.len()))?
        .with_flags(flags)
}
