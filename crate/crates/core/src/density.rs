//! Kernel density estimation from exact and from error-contaminated data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deconv_kernel::{BatchedSum, DeconvKernelPlan};
use crate::error::{DeconvError, Result};
use crate::kernels::{KernelEvaluator, KernelSpec};
use crate::quadrature::{linspace, trapezoid, DEFAULT_NODES};

/// Default number of evaluation points.
pub const DEFAULT_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    /// `W = X + U` (optionally with `Y = g(X) + V`).
    Classical,
    /// `X = W + U`, `Y = g(X) + V`.
    Berkson,
}

/// Observed data, with latent values kept when they are known (simulation).
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedSample {
    w: Vec<f64>,
    y: Option<Vec<f64>>,
    x_true: Option<Vec<f64>>,
    model: ModelTag,
}

impl ContaminatedSample {
    pub fn new(
        w: Vec<f64>,
        y: Option<Vec<f64>>,
        x_true: Option<Vec<f64>>,
        model: ModelTag,
    ) -> Result<Self> {
        if w.is_empty() {
            return Err(DeconvError::EmptySample);
        }
        for (name, col) in [("y", &y), ("x_true", &x_true)] {
            if let Some(c) = col {
                if c.len() != w.len() {
                    return Err(DeconvError::ConfigInvalid(format!(
                        "column {name} has {} values, w has {}",
                        c.len(),
                        w.len()
                    )));
                }
            }
        }
        if w.iter().chain(y.iter().flatten()).chain(x_true.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(DeconvError::NonFinite("sample contains NaN or infinity".into()));
        }
        Ok(Self {
            w,
            y,
            x_true,
            model,
        })
    }

    /// Density data under the classical model.
    pub fn classical(w: Vec<f64>) -> Result<Self> {
        Self::new(w, None, None, ModelTag::Classical)
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn x_true(&self) -> Option<&[f64]> {
        self.x_true.as_deref()
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Same sample with every observation shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.w.iter_mut().for_each(|v| *v += c);
        if let Some(x) = out.x_true.as_mut() {
            x.iter_mut().for_each(|v| *v += c);
        }
        out
    }

    pub(crate) fn require_classical(&self) -> Result<()> {
        match self.model {
            ModelTag::Classical => Ok(()),
            ModelTag::Berkson => Err(DeconvError::ModelMismatch("Berkson".into())),
        }
    }
}

/// Per-point status of a fitted curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    Ok,
    EmptyNeighborhood,
    SingularLocalFit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveMeta {
    pub estimator: String,
    pub kernel: String,
    pub error: String,
    pub h: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

/// An estimated function on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    grid: Vec<f64>,
    values: Vec<f64>,
    flags: Option<Vec<PointFlag>>,
    pub meta: CurveMeta,
}

impl CurveEstimate {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, meta: CurveMeta) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(DeconvError::GridMismatch(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DeconvError::NonFinite(format!(
                "estimate at x = {} is {}",
                grid[i], values[i]
            )));
        }
        Ok(Self {
            grid,
            values,
            flags: None,
            meta,
        })
    }

    pub fn with_flags(mut self, flags: Vec<PointFlag>) -> Result<Self> {
        if flags.len() != self.grid.len() {
            return Err(DeconvError::GridMismatch("flag count differs from grid".into()));
        }
        self.flags = Some(flags);
        Ok(self)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flags(&self) -> Option<&[PointFlag]> {
        self.flags.as_deref()
    }

    /// Fails with the first flagged point, if any.
    pub fn check_flags(&self) -> Result<()> {
        let Some(flags) = &self.flags else {
            return Ok(());
        };
        for (&x, flag) in self.grid.iter().zip(flags) {
            match flag {
                PointFlag::Ok => {}
                PointFlag::EmptyNeighborhood => return Err(DeconvError::EmptyNeighborhood(x)),
                PointFlag::SingularLocalFit => {
                    return Err(DeconvError::SingularLocalFit {
                        x,
                        condition: f64::INFINITY,
                    })
                }
            }
        }
        Ok(())
    }

    /// Negative part clipped to zero and the result rescaled to unit mass.
    pub fn truncated_and_renormalized(&self) -> Result<Self> {
        let clipped: Vec<f64> = self.values.iter().map(|v| v.max(0.0)).collect();
        let mass = trapezoid(&self.grid, &clipped);
        if !(mass > 0.0) {
            return Err(DeconvError::NonFinite("estimate has no positive mass".into()));
        }
        let mut out = self.clone();
        out.values = clipped.into_iter().map(|v| v / mass).collect();
        Ok(out)
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(DeconvError::GridMismatch("empty grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DeconvError::GridMismatch(
            "grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(DeconvError::ConfigInvalid(format!(
            "bandwidth must be positive, got {h}"
        )))
    }
}

/// 512 points spanning the data plus `3 h sd(W)` on each side.
pub fn default_grid(w: &[f64], h: f64) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(DeconvError::EmptySample);
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = if w.len() > 1 {
        (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        1.0
    };
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h * scale;
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h * scale;
    Ok(linspace(lo, hi, DEFAULT_GRID_POINTS))
}

/// Error-free estimator `(1/(n h)) sum K((x - X_i) / h)`.
pub fn kde(data: &[f64], kernel: KernelSpec, h: f64, grid: &[f64]) -> Result<CurveEstimate> {
    kde_with(data, &KernelEvaluator::new(kernel, DEFAULT_NODES)?, h, grid)
}

pub fn kde_with(
    data: &[f64],
    kernel: &KernelEvaluator,
    h: f64,
    grid: &[f64],
) -> Result<CurveEstimate> {
    if data.is_empty() {
        return Err(DeconvError::EmptySample);
    }
    check_bandwidth(h)?;
    validate_grid(grid)?;
    let scale = 1.0 / (data.len() as f64 * h);
    let values = grid
        .par_iter()
        .map(|&x| data.iter().map(|&xi| kernel.eval((x - xi) / h)).sum::<f64>() * scale)
        .collect();
    CurveEstimate::new(
        grid.to_vec(),
        values,
        CurveMeta {
            estimator: "kde".into(),
            kernel: kernel.spec().to_string(),
            error: "none".into(),
            h,
            n: data.len(),
            ..CurveMeta::default()
        },
    )
}

fn deconv_meta(estimator: &str, plan: &DeconvKernelPlan, n: usize) -> CurveMeta {
    CurveMeta {
        estimator: estimator.into(),
        kernel: plan.kernel().to_string(),
        error: plan.error().name(),
        h: plan.bandwidth(),
        n,
        ..CurveMeta::default()
    }
}

fn require_density_plan(plan: &DeconvKernelPlan) -> Result<()> {
    if plan.order() != 0 {
        return Err(DeconvError::ConfigInvalid(format!(
            "density estimation needs an order-0 kernel plan, got order {}",
            plan.order()
        )));
    }
    Ok(())
}

/// Deconvolution estimator `(1/(n h)) sum K_U((x - W_i) / h)`, evaluated
/// directly point by point (reference path).
pub fn deconv_kde(
    sample: &ContaminatedSample,
    plan: &DeconvKernelPlan,
    grid: &[f64],
) -> Result<CurveEstimate> {
    sample.require_classical()?;
    require_density_plan(plan)?;
    validate_grid(grid)?;
    let h = plan.bandwidth();
    let scale = 1.0 / (sample.len() as f64 * h);
    let values = grid
        .par_iter()
        .map(|&x| sample.w.iter().map(|&wi| plan.eval((x - wi) / h)).sum::<f64>() * scale)
        .collect();
    CurveEstimate::new(grid.to_vec(), values, deconv_meta("deconv-kde", plan, sample.len()))
}

/// Same estimator as [`deconv_kde`], evaluated through the empirical
/// characteristic function; cost `O((n + grid) * nodes)`.
pub fn deconv_kde_batched(
    sample: &ContaminatedSample,
    plan: &DeconvKernelPlan,
    grid: &[f64],
) -> Result<CurveEstimate> {
    sample.require_classical()?;
    require_density_plan(plan)?;
    validate_grid(grid)?;
    let batch = BatchedSum::new(plan, &sample.w, None)?;
    let values = grid.par_iter().map(|&x| batch.eval(x)).collect();
    CurveEstimate::new(grid.to_vec(), values, deconv_meta("deconv-kde", plan, sample.len()))
}

/// Trapezoid integral of the estimate over its grid.
pub fn integrate_estimate(est: &CurveEstimate) -> f64 {
    trapezoid(&est.grid, &est.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::ErrorModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fp(r: u32, s: u32) -> KernelSpec {
        KernelSpec::fourier_polynomial(r, s).unwrap()
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn sinc_kde_single_point() {
        let est = kde(&[0.0], KernelSpec::sinc(), 1.0, &[0.0, 2.0]).unwrap();
        assert_eq!(est.values(), &[1.0, 0.0]);
    }

    #[test]
    fn kde_of_normal_sample_at_zero() {
        let data = normals(1000, 11);
        let est = kde(&data, fp(2, 2), 0.4, &[0.0]).unwrap();
        // E f_hat(0) = (1/pi) int_0^{1/h} (1 - h^2 t^2)^2 exp(-t^2/2) dt
        let t = linspace(0.0, 2.5, 25001);
        let g: Vec<f64> = t
            .iter()
            .map(|&t| (1.0 - 0.16 * t * t).powi(2) * (-0.5 * t * t).exp())
            .collect();
        let mean = trapezoid(&t, &g) / std::f64::consts::PI;
        // sd of f_hat(0) is about 0.01
        assert!((est.values()[0] - mean).abs() < 0.04, "{} vs {mean}", est.values()[0]);
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert_eq!(kde(&[], fp(2, 2), 1.0, &[0.0]), Err(DeconvError::EmptySample));
        assert!(kde(&[0.0], fp(2, 2), 0.0, &[0.0]).is_err());
        assert!(kde(&[0.0], fp(2, 2), 1.0, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn degenerate_deconv_matches_kde() {
        let data = normals(60, 3);
        let sample = ContaminatedSample::classical(data.clone()).unwrap();
        let grid = linspace(-4.0, 4.0, 81);
        for kernel in [fp(2, 2), fp(2, 3)] {
            let plan = DeconvKernelPlan::new(kernel, ErrorModel::none(), 0.5).unwrap();
            let a = deconv_kde(&sample, &plan, &grid).unwrap();
            let b = kde(&data, kernel, 0.5, &grid).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_observation_sinc_laplace() {
        let sample = ContaminatedSample::classical(vec![0.0]).unwrap();
        let plan = DeconvKernelPlan::new(KernelSpec::sinc(), ErrorModel::laplace(1.0).unwrap(), 1.0)
            .unwrap();
        let est = deconv_kde(&sample, &plan, &[0.0]).unwrap();
        let exact = 1.0 + std::f64::consts::PI.powi(2) / 3.0;
        assert!((est.values()[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn berkson_samples_are_rejected() {
        let sample =
            ContaminatedSample::new(vec![0.0, 1.0], Some(vec![1.0, 2.0]), None, ModelTag::Berkson)
                .unwrap();
        let plan = DeconvKernelPlan::new(fp(2, 2), ErrorModel::none(), 1.0).unwrap();
        assert!(matches!(
            deconv_kde(&sample, &plan, &[0.0]),
            Err(DeconvError::ModelMismatch(_))
        ));
    }

    #[test]
    fn batched_path_matches_direct_path() {
        let data = normals(80, 5);
        let sample = ContaminatedSample::classical(data).unwrap();
        let grid = linspace(-5.0, 5.0, 101);
        for kernel in [KernelSpec::sinc(), fp(2, 2)] {
            let plan = DeconvKernelPlan::new(kernel, ErrorModel::laplace(0.3).unwrap(), 0.3).unwrap();
            let a = deconv_kde(&sample, &plan, &grid).unwrap();
            let b = deconv_kde_batched(&sample, &plan, &grid).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn estimates_may_be_negative_and_are_not_clipped() {
        let data = normals(30, 8);
        let sample = ContaminatedSample::classical(data).unwrap();
        let plan = DeconvKernelPlan::new(KernelSpec::sinc(), ErrorModel::laplace(0.3).unwrap(), 0.25)
            .unwrap();
        let grid = linspace(-8.0, 8.0, 801);
        let est = deconv_kde(&sample, &plan, &grid).unwrap();
        assert!(est.values().iter().any(|&v| v < 0.0));
        let fixed = est.truncated_and_renormalized().unwrap();
        assert!(fixed.values().iter().all(|&v| v >= 0.0));
        assert!((integrate_estimate(&fixed) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_equivariance() {
        let data = normals(25, 9);
        let sample = ContaminatedSample::classical(data).unwrap();
        let plan = DeconvKernelPlan::new(fp(2, 2), ErrorModel::laplace(0.2).unwrap(), 0.4).unwrap();
        let grid = linspace(-3.0, 3.0, 31);
        let c = 0.75;
        let shifted_grid: Vec<f64> = grid.iter().map(|g| g + c).collect();
        let a = deconv_kde(&sample, &plan, &grid).unwrap();
        let b = deconv_kde(&sample.shifted(c), &plan, &shifted_grid).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn integration() {
        let zero = CurveEstimate::new(linspace(0.0, 1.0, 11), vec![0.0; 11], CurveMeta::default())
            .unwrap();
        assert_eq!(integrate_estimate(&zero), 0.0);

        let data = normals(50, 2);
        let est = kde(&data, fp(2, 3), 0.5, &linspace(-400.0, 400.0, 16001)).unwrap();
        assert!((integrate_estimate(&est) - 1.0).abs() < 1e-6, "{}", integrate_estimate(&est));
    }

    #[test]
    fn curve_validation() {
        assert!(CurveEstimate::new(vec![0.0, 1.0], vec![1.0], CurveMeta::default()).is_err());
        assert!(CurveEstimate::new(vec![0.0, 1.0], vec![1.0, f64::NAN], CurveMeta::default()).is_err());
        assert!(CurveEstimate::new(vec![1.0, 1.0], vec![1.0, 1.0], CurveMeta::default()).is_err());
    }

    #[test]
    fn default_grid_spans_data() {
        let g = default_grid(&[-1.0, 0.0, 2.0], 0.5).unwrap();
        assert_eq!(g.len(), 512);
        assert!(g[0] < -1.0 && g[511] > 2.0);
    }
}
