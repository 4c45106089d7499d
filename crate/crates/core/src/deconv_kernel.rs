//! Deconvolution kernels `K_U` and their derivative-weighted variants
//! `K_{U,r}`.
//!
//! `K_{U,r}(x) = (2 pi i^r)^-1 int exp(-i t x) phi_K^(r)(t) / phi_U(t / h) dt`
//! over the compact support of `phi_K`, with `r = 0` giving `K_U`. With a
//! symmetric kernel and error the integral is real and reduces to a cosine
//! (even `r`) or sine (odd `r`) transform over the nonnegative half of the
//! support.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{DeconvError, Result};
use crate::error_models::ErrorCf;
use crate::kernels::KernelSpec;
use crate::quadrature::{SpectralRule, DEFAULT_NODES};

/// Nodes with `|phi_U(t / h)|` below this are treated as zeros of `phi_U`.
pub const VANISHING_THRESHOLD: f64 = 1e-12;

/// Node weights above this put the estimator in the variance blow-up regime.
pub const WEIGHT_WARN_THRESHOLD: f64 = 1e8;

/// An immutable, fully tabulated deconvolution kernel.
#[derive(Debug, Clone)]
pub struct DeconvKernelPlan {
    kernel: KernelSpec,
    error: ErrorCf,
    h: f64,
    order: u32,
    rule: SpectralRule,
    /// `phi_K^(r)(t) / phi_U(t / h)` at every node of `rule`.
    psi: Vec<f64>,
    half_nodes: Vec<f64>,
    /// folded weight * psi / (2 pi) on the nonnegative nodes
    half_coeffs: Vec<f64>,
}

impl DeconvKernelPlan {
    /// Plan for `K_U` with the default node count.
    pub fn new(kernel: KernelSpec, error: impl Into<ErrorCf>, h: f64) -> Result<Self> {
        Self::with_order(kernel, error, h, DEFAULT_NODES, 0)
    }

    pub fn with_order(
        kernel: KernelSpec,
        error: impl Into<ErrorCf>,
        h: f64,
        n_quad: usize,
        order: u32,
    ) -> Result<Self> {
        let rule = kernel.rule(n_quad)?;
        Self::with_rule(kernel, error, h, rule, order)
    }

    /// Builds a plan on a caller-supplied rule, which must cover the support
    /// of `phi_K` exactly.
    pub fn with_rule(
        kernel: KernelSpec,
        error: impl Into<ErrorCf>,
        h: f64,
        rule: SpectralRule,
        order: u32,
    ) -> Result<Self> {
        let error = error.into();
        if !(h > 0.0 && h.is_finite()) {
            return Err(DeconvError::ConfigInvalid(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        if rule.half_width() != kernel.support_phi() {
            return Err(DeconvError::ConfigInvalid(format!(
                "quadrature rule half-width {} does not match the support of {kernel}",
                rule.half_width()
            )));
        }
        if order > 2 {
            return Err(DeconvError::UnsupportedKernel(format!(
                "{kernel} (order {order} > 2)"
            )));
        }
        let mut psi = Vec::with_capacity(rule.len());
        for &t in rule.nodes() {
            let phi_u = error.eval(t / h);
            if !(phi_u.abs() >= VANISHING_THRESHOLD) {
                return Err(DeconvError::VanishingCharacteristicFunction {
                    t: t / h,
                    value: phi_u,
                });
            }
            let phi_k = if order == 0 {
                kernel.eval_phi(t)
            } else {
                kernel.eval_phi_deriv(t, order)?
            };
            psi.push(phi_k / phi_u);
        }
        let m = (rule.len() - 1) / 2;
        let (half_nodes, half_weights) = rule.folded();
        let half_coeffs = half_weights
            .iter()
            .zip(&psi[m..])
            .map(|(w, p)| w * p / (2.0 * PI))
            .collect();
        let plan = Self {
            kernel,
            error,
            h,
            order,
            rule,
            psi,
            half_nodes,
            half_coeffs,
        };
        let max_weight = plan.max_node_weight();
        if max_weight > WEIGHT_WARN_THRESHOLD {
            log::warn!(
                "deconvolution kernel {} / {} at h = {}: node weight {:e} exceeds {:e}; variance will be very large",
                plan.kernel,
                plan.error.name(),
                plan.h,
                max_weight,
                WEIGHT_WARN_THRESHOLD
            );
        }
        Ok(plan)
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn error(&self) -> &ErrorCf {
        &self.error
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn rule(&self) -> &SpectralRule {
        &self.rule
    }

    /// `phi_K^(r)(t) / phi_U(t / h)` at the nodes of [`Self::rule`].
    pub fn node_values(&self) -> &[f64] {
        &self.psi
    }

    pub fn half_nodes(&self) -> &[f64] {
        &self.half_nodes
    }

    pub fn half_coeffs(&self) -> &[f64] {
        &self.half_coeffs
    }

    /// Largest `|phi_K^(r)(t) / phi_U(t / h)|` over the nodes.
    pub fn max_node_weight(&self) -> f64 {
        self.psi.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    /// Real-form evaluation of `K_{U,r}(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let nodes = self.half_nodes.iter().zip(&self.half_coeffs);
        match self.order {
            0 => nodes.map(|(&t, &c)| c * (t * x).cos()).sum(),
            1 => -nodes.map(|(&t, &c)| c * (t * x).sin()).sum::<f64>(),
            _ => -nodes.map(|(&t, &c)| c * (t * x).cos()).sum::<f64>(),
        }
    }

    /// Evaluation of the full complex integral over the whole rule.
    pub fn eval_complex(&self, x: f64) -> Complex64 {
        let sum: Complex64 = self
            .rule
            .nodes()
            .iter()
            .zip(self.rule.weights())
            .zip(&self.psi)
            .map(|((&t, &w), &p)| Complex64::from_polar(w * p, -t * x))
            .sum();
        sum * minus_i_pow(self.order) / (2.0 * PI)
    }

    /// Largest imaginary part of the complex-form integral over `xs`.
    pub fn realness_residual(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| self.eval_complex(x).im.abs())
            .fold(0.0, f64::max)
    }
}

/// `(-i)^r`, which equals `1 / i^r`.
pub(crate) fn minus_i_pow(r: u32) -> Complex64 {
    match r % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

const REANCHOR: usize = 64;

/// `(1/n) sum_i y_i exp(i j step w_i)` for `j = 0..count`, by rotation with
/// periodic exact re-anchoring.
pub fn empirical_cf_equispaced(
    w: &[f64],
    y: Option<&[f64]>,
    step: f64,
    count: usize,
) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); count];
    for (i, &wi) in w.iter().enumerate() {
        let yi = y.map_or(1.0, |y| y[i]);
        let rot = Complex64::from_polar(1.0, step * wi);
        let mut p = Complex64::new(yi, 0.0);
        for (j, slot) in acc.iter_mut().enumerate() {
            if j % REANCHOR == 0 && j > 0 {
                p = Complex64::from_polar(yi, step * wi * j as f64);
            }
            *slot += p;
            p *= rot;
        }
    }
    let n = w.len() as f64;
    acc.iter_mut().for_each(|c| *c /= n);
    acc
}

/// Batched evaluation of `(1/(n h)) sum_i y_i K_{U,r}((x - W_i) / h)` on many
/// points, through the empirical characteristic function of the data.
///
/// Uses the same nodes and weights as [`DeconvKernelPlan::eval`], so it
/// reproduces the direct sum up to rounding.
#[derive(Debug, Clone)]
pub struct BatchedSum {
    coeffs: Vec<f64>,
    ecf: Vec<Complex64>,
    phase: Complex64,
    step: f64,
    h: f64,
}

impl BatchedSum {
    pub fn new(plan: &DeconvKernelPlan, w: &[f64], y: Option<&[f64]>) -> Result<Self> {
        if w.is_empty() {
            return Err(DeconvError::EmptySample);
        }
        if let Some(y) = y {
            if y.len() != w.len() {
                return Err(DeconvError::ConfigInvalid(
                    "responses and observations differ in length".into(),
                ));
            }
        }
        let h = plan.bandwidth();
        let step = plan.rule().step() / h;
        let ecf = empirical_cf_equispaced(w, y, step, plan.half_nodes().len());
        Ok(Self {
            coeffs: plan.half_coeffs().to_vec(),
            ecf,
            phase: minus_i_pow(plan.order()),
            step,
            h,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let rot = Complex64::from_polar(1.0, -self.step * x);
        let mut p = self.phase;
        let mut sum = 0.0;
        for (j, (&c, e)) in self.coeffs.iter().zip(&self.ecf).enumerate() {
            if j % REANCHOR == 0 && j > 0 {
                p = self.phase * Complex64::from_polar(1.0, -self.step * x * j as f64);
            }
            sum += c * (p * e).re;
            p *= rot;
        }
        sum / self.h
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::ErrorModel;
    use crate::kernels::KernelEvaluator;

    fn fp(r: u32, s: u32) -> KernelSpec {
        KernelSpec::fourier_polynomial(r, s).unwrap()
    }

    /// Independent brute-force oracle: complex trapezoid written out from the
    /// definition, node by node, without touching the plan.
    fn oracle(kernel: KernelSpec, error: ErrorModel, h: f64, r: u32, x: f64, n: usize) -> Complex64 {
        let half = kernel.support_phi();
        let m = (n - 1) / 2;
        let step = half / m as f64;
        let mut sum = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let t = -half + step * j as f64;
            let w = if j == 0 || j == n - 1 { 0.5 * step } else { step };
            let d = if r == 0 {
                kernel.eval_phi(t)
            } else {
                kernel.eval_phi_deriv(t, r).unwrap()
            };
            sum += Complex64::new(0.0, -t * x).exp() * (w * d / error.phi(t / h));
        }
        sum / (2.0 * PI * Complex64::new(0.0, 1.0).powu(r))
    }

    #[test]
    fn degenerate_error_reduces_to_kernel() {
        for kernel in [fp(2, 2), fp(2, 3), KernelSpec::sinc()] {
            let plan = DeconvKernelPlan::new(kernel, ErrorModel::none(), 0.7).unwrap();
            let k = KernelEvaluator::new(kernel, 4097).unwrap();
            for i in 0..101 {
                let x = -5.0 + 0.1 * i as f64;
                assert!((plan.eval(x) - k.eval(x)).abs() <= 1e-6, "{kernel} x={x}");
            }
        }
    }

    #[test]
    fn sinc_laplace_at_zero_matches_closed_form() {
        let b = 0.4;
        let plan =
            DeconvKernelPlan::new(KernelSpec::sinc(), ErrorModel::laplace(b).unwrap(), b).unwrap();
        let exact = 1.0 + PI * PI / 3.0;
        assert!((plan.eval(0.0) - exact).abs() < 1e-8, "{}", plan.eval(0.0));
        assert!((exact - 4.289868).abs() < 1e-6);
    }

    /// `(1/pi) int_0^pi cos(t x) (1 + t^2) dt` from its antiderivative.
    fn sinc_laplace_unit_closed_form(x: f64) -> f64 {
        let s = (PI * x).sin();
        let c = (PI * x).cos();
        (s / x + (PI * PI * x * x * s + 2.0 * PI * x * c - 2.0 * s) / x.powi(3)) / PI
    }

    #[test]
    fn sinc_laplace_matches_antiderivative() {
        let plan = DeconvKernelPlan::new(
            KernelSpec::sinc(),
            ErrorModel::laplace(1.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert!((sinc_laplace_unit_closed_form(1.0) + 2.0).abs() < 1e-12);
        for &x in &[1.0, 0.3, 2.7] {
            let exact = sinc_laplace_unit_closed_form(x);
            assert!((plan.eval(x) - exact).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn first_order_kernel_vanishes_at_zero() {
        for (kernel, error) in [
            (fp(2, 2), ErrorModel::none()),
            (fp(2, 3), ErrorModel::laplace(0.3).unwrap()),
        ] {
            let plan = DeconvKernelPlan::with_order(kernel, error, 0.5, 4097, 1).unwrap();
            assert_eq!(plan.eval(0.0), 0.0);
        }
    }

    #[test]
    fn derivative_kernels_match_complex_oracle() {
        let lap = ErrorModel::laplace(0.3).unwrap();
        let plan = DeconvKernelPlan::with_order(fp(2, 3), lap, 0.5, 4097, 2).unwrap();
        let o = oracle(fp(2, 3), lap, 0.5, 2, 0.7, 400_001);
        assert!((plan.eval(0.7) - o.re).abs() < 1e-8);
        assert!(o.im.abs() < 1e-10);

        let plan = DeconvKernelPlan::with_order(fp(2, 2), ErrorModel::none(), 1.0, 4097, 1).unwrap();
        let k = KernelEvaluator::new(fp(2, 2), 4097).unwrap();
        for &x in &[-2.0, 0.4, 1.3, 3.0] {
            let o = oracle(fp(2, 2), ErrorModel::none(), 1.0, 1, x, 400_001);
            assert!((plan.eval(x) - o.re).abs() < 1e-10);
            // error-free identity: K_{U,1}(x) = x K(x)
            assert!((plan.eval(x) - x * k.eval(x)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn second_order_kernel_reduces_to_x_squared_k() {
        let plan = DeconvKernelPlan::with_order(fp(2, 3), ErrorModel::none(), 1.0, 4097, 2).unwrap();
        let k = KernelEvaluator::new(fp(2, 3), 4097).unwrap();
        for &x in &[-2.0, 0.0, 0.4, 1.3, 3.0] {
            assert!((plan.eval(x) - x * x * k.eval(x)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn realness_residuals() {
        let grid: Vec<f64> = (0..61).map(|i| -3.0 + 0.1 * i as f64).collect();
        let plan = DeconvKernelPlan::new(KernelSpec::sinc(), ErrorModel::none(), 1.0).unwrap();
        assert!(plan.realness_residual(&grid) <= 1e-12);

        let wide: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64).collect();
        let lap = ErrorModel::laplace(1.0).unwrap();
        let plan = DeconvKernelPlan::new(KernelSpec::sinc(), lap, 0.2).unwrap();
        assert!(plan.realness_residual(&wide) <= 1e-10);
        let plan = DeconvKernelPlan::with_order(fp(2, 2), lap, 0.2, 4097, 1).unwrap();
        assert!(plan.realness_residual(&wide) <= 1e-10);
    }

    #[test]
    fn complex_and_real_forms_agree() {
        let lap = ErrorModel::laplace(0.5).unwrap();
        for (kernel, r) in [(KernelSpec::sinc(), 0), (fp(2, 2), 0), (fp(2, 2), 1), (fp(2, 3), 2)] {
            let plan = DeconvKernelPlan::with_order(kernel, lap, 0.4, 4097, r).unwrap();
            for &x in &[0.0, 0.33, -1.7, 4.0] {
                assert!((plan.eval(x) - plan.eval_complex(x).re).abs() < 1e-10);
            }
        }
        let plan = DeconvKernelPlan::new(fp(2, 2), lap, 0.4).unwrap();
        let direct = plan.rule().integrate(|t| fp(2, 2).eval_phi(t) / lap.phi(t / 0.4)) / (2.0 * PI);
        assert!((direct - plan.eval(0.0)).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_even_with_symmetric_error() {
        let plan =
            DeconvKernelPlan::new(fp(2, 2), ErrorModel::laplace(0.8).unwrap(), 0.3).unwrap();
        for i in 0..50 {
            let x = 0.21 * i as f64;
            assert!((plan.eval(x) - plan.eval(-x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn doubling_nodes_changes_little() {
        let lap = ErrorModel::laplace(0.5).unwrap();
        for kernel in [fp(2, 2), fp(2, 3)] {
            let a = DeconvKernelPlan::with_order(kernel, lap, 0.5, 4097, 0).unwrap();
            let b = DeconvKernelPlan::with_order(kernel, lap, 0.5, 8193, 0).unwrap();
            for i in 0..41 {
                let x = -4.0 + 0.2 * i as f64;
                assert!((a.eval(x) - b.eval(x)).abs() <= 1e-8, "{kernel} x={x}");
            }
        }
    }

    #[test]
    fn rejects_invalid_plans() {
        let lap = ErrorModel::laplace(1.0).unwrap();
        assert!(DeconvKernelPlan::new(fp(2, 2), lap, 0.0).is_err());
        assert!(DeconvKernelPlan::with_order(fp(2, 2), lap, 1.0, 4096, 0).is_err());
        assert!(matches!(
            DeconvKernelPlan::with_order(KernelSpec::sinc(), lap, 1.0, 4097, 1),
            Err(DeconvError::UnsupportedKernel(_))
        ));
        let gauss = ErrorModel::gaussian(1.0).unwrap();
        assert!(matches!(
            DeconvKernelPlan::new(KernelSpec::sinc(), gauss, 0.05),
            Err(DeconvError::VanishingCharacteristicFunction { .. })
        ));
        assert!(DeconvKernelPlan::new(KernelSpec::sinc(), gauss, 1.0).is_ok());
    }

    #[test]
    fn batched_sum_matches_direct() {
        let lap = ErrorModel::laplace(0.3).unwrap();
        let w: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 20.0 - 2.5).collect();
        let y: Vec<f64> = w.iter().map(|v| v * v - 0.3).collect();
        for (kernel, r) in [(KernelSpec::sinc(), 0), (fp(2, 2), 0), (fp(2, 2), 1), (fp(2, 3), 2)] {
            let plan = DeconvKernelPlan::with_order(kernel, lap, 0.35, 4097, r).unwrap();
            let batch = BatchedSum::new(&plan, &w, Some(&y)).unwrap();
            for &x in &[-3.1, -0.5, 0.0, 0.77, 2.4] {
                let direct: f64 = w
                    .iter()
                    .zip(&y)
                    .map(|(wi, yi)| yi * plan.eval((x - wi) / 0.35))
                    .sum::<f64>()
                    / (w.len() as f64 * 0.35);
                assert!((batch.eval(x) - direct).abs() < 1e-10, "{kernel} r={r} x={x}");
            }
        }
    }
}
