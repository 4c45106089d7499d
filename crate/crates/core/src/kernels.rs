//! Kernels defined through compactly supported Fourier transforms.
//!
//! Two families are supported: `phi_K(t) = (1 - |t|^r)^s` on `|t| <= 1`
//! with even `r`, and the sinc kernel `L(x) = sin(pi x) / (pi x)` whose
//! transform is the indicator of `|t| <= pi`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::quadrature::{SpectralRule, DEFAULT_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `phi_K(t) = (1 - |t|^r)^s` for `|t| <= 1`, zero elsewhere.
    FourierPolynomial { r: u32, s: u32 },
    /// `phi_L(t) = 1` for `|t| <= pi`, zero elsewhere.
    Sinc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KernelSpec {
    family: KernelFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelOrder {
    Second,
    /// `r >= 4`: the second moment vanishes.
    Higher(u32),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    /// `int x^2 K(x) dx`.
    pub kappa: f64,
    pub order: KernelOrder,
}

impl KernelSpec {
    pub fn fourier_polynomial(r: u32, s: u32) -> Result<Self> {
        if r == 0 || !r.is_multiple_of(2) {
            return Err(DeconvError::ConfigInvalid(format!(
                "fourier-polynomial kernel needs a positive even r, got {r}"
            )));
        }
        Ok(Self {
            family: KernelFamily::FourierPolynomial { r, s },
        })
    }

    pub const fn sinc() -> Self {
        Self {
            family: KernelFamily::Sinc,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn is_sinc(&self) -> bool {
        matches!(self.family, KernelFamily::Sinc)
    }

    /// Half-width of the support of `phi_K`.
    pub fn support_phi(&self) -> f64 {
        match self.family {
            KernelFamily::FourierPolynomial { .. } => 1.0,
            KernelFamily::Sinc => PI,
        }
    }

    /// Quadrature rule covering the support of `phi_K`.
    pub fn rule(&self, n_nodes: usize) -> Result<SpectralRule> {
        SpectralRule::new(self.support_phi(), n_nodes)
    }

    pub fn eval_phi(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.family {
            KernelFamily::FourierPolynomial { r, s } => {
                if a > 1.0 {
                    0.0
                } else {
                    (1.0 - a.powi(r as i32)).powi(s as i32)
                }
            }
            KernelFamily::Sinc => {
                if a <= PI {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of `phi_K` of order 1 or 2.
    ///
    /// At `|t| = 1` the value is the limit from inside the support, which is
    /// zero whenever `s > order`.
    pub fn eval_phi_deriv(&self, t: f64, order: u32) -> Result<f64> {
        let (r, s) = match self.family {
            KernelFamily::Sinc => return Err(DeconvError::UnsupportedKernel(self.to_string())),
            KernelFamily::FourierPolynomial { r, s } => (r as i32, s as i32),
        };
        if !(1..=2).contains(&order) || s < order as i32 {
            return Err(DeconvError::UnsupportedKernel(format!(
                "{self} (derivative of order {order})"
            )));
        }
        if t.abs() > 1.0 {
            return Ok(0.0);
        }
        let rf = r as f64;
        let sf = s as f64;
        let v = 1.0 - t.powi(r);
        // d/dt t^r and d²/dt² t^r
        let dp = rf * t.powi(r - 1);
        let ddp = rf * (rf - 1.0) * t.powi(r - 2);
        Ok(match order {
            1 => -sf * v.powi(s - 1) * dp,
            _ => {
                let first = if s >= 2 {
                    sf * (sf - 1.0) * v.powi(s - 2) * dp * dp
                } else {
                    0.0
                };
                first - sf * v.powi(s - 1) * ddp
            }
        })
    }

    /// Kernel value `K(x)`. Fourier-polynomial kernels are inverted by
    /// Simpson quadrature with the default node count.
    pub fn eval_kernel(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::Sinc => sinc(x),
            KernelFamily::FourierPolynomial { .. } => KernelEvaluator::new(*self, DEFAULT_NODES)
                .expect("default node count is valid")
                .eval(x),
        }
    }

    pub fn moments(&self) -> Result<KernelMoments> {
        match self.family {
            KernelFamily::Sinc => Err(DeconvError::UndefinedMoment(self.to_string())),
            KernelFamily::FourierPolynomial { s: 0, .. } => {
                Err(DeconvError::UndefinedMoment(self.to_string()))
            }
            // -phi''(0): (1 - t^2)^s = 1 - s t^2 + ..., and t^r with r >= 4
            // contributes nothing at second order
            KernelFamily::FourierPolynomial { r, s } => Ok(if r == 2 {
                KernelMoments {
                    kappa: 2.0 * s as f64,
                    order: KernelOrder::Second,
                }
            } else {
                KernelMoments {
                    kappa: 0.0,
                    order: KernelOrder::Higher(r),
                }
            }),
        }
    }

    /// `int phi_K(t)^2 dt / (2 pi)`, i.e. `int K^2`.
    pub fn roughness(&self, rule: &SpectralRule) -> f64 {
        rule.integrate(|t| self.eval_phi(t).powi(2)) / (2.0 * PI)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Sinc => write!(f, "sinc"),
            KernelFamily::FourierPolynomial { r, s } => write!(f, "fp:r={r},s={s}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = DeconvError;

    /// Parses `"sinc"` or `"fp:r=<even>,s=<int>"`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("sinc") {
            return Ok(Self::sinc());
        }
        let body = text
            .strip_prefix("fp:")
            .ok_or_else(|| DeconvError::Parse(format!("unknown kernel '{text}'")))?;
        let params = crate::parse_params(body)?;
        let get = |key: &str| -> Result<u32> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| DeconvError::Parse(format!("kernel '{text}' is missing '{key}'")))?
                .1
                .parse::<u32>()
                .map_err(|e| DeconvError::Parse(format!("kernel '{text}': {e}")))
        };
        Self::fourier_polynomial(get("r")?, get("s")?)
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = DeconvError;
    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<KernelSpec> for String {
    fn from(value: KernelSpec) -> Self {
        value.to_string()
    }
}

/// `sin(pi x)`, exactly zero at integers.
pub fn sin_pi(x: f64) -> f64 {
    let k = x.round();
    let frac = x - k;
    let s = (PI * frac).sin();
    if k.rem_euclid(2.0) == 0.0 {
        s
    } else {
        -s
    }
}

/// `sin(pi x) / (pi x)` with the removable singularity patched to 1.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        sin_pi(x) / (PI * x)
    }
}

/// Kernel evaluator with the quadrature table built once.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    spec: KernelSpec,
    nodes: Vec<f64>,
    // folded weight * phi_K(t) / (2 pi)
    coeffs: Vec<f64>,
}

impl KernelEvaluator {
    pub fn new(spec: KernelSpec, n_nodes: usize) -> Result<Self> {
        let (nodes, weights) = spec.rule(n_nodes)?.folded();
        let coeffs = nodes
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| w * spec.eval_phi(t) / (2.0 * PI))
            .collect();
        Ok(Self {
            spec,
            nodes,
            coeffs,
        })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.spec.family {
            KernelFamily::Sinc => sinc(x),
            KernelFamily::FourierPolynomial { .. } => self
                .nodes
                .iter()
                .zip(&self.coeffs)
                .map(|(&t, &c)| c * (t * x).cos())
                .sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(r: u32, s: u32) -> KernelSpec {
        KernelSpec::fourier_polynomial(r, s).unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(fp(2, 2).eval_phi(0.0), 1.0);
        assert!((fp(2, 2).eval_phi(0.5) - 0.5625).abs() < 1e-15);
        assert_eq!(KernelSpec::sinc().eval_phi(4.0), 0.0);
        assert_eq!(KernelSpec::sinc().eval_phi(-3.0), 1.0);
        assert_eq!(fp(2, 1).eval_phi(1.5), 0.0);
    }

    #[test]
    fn phi_derivative_examples() {
        assert!((fp(2, 2).eval_phi_deriv(0.0, 2).unwrap() + 4.0).abs() < 1e-15);
        assert_eq!(fp(2, 3).eval_phi_deriv(0.0, 1).unwrap(), 0.0);
        assert!((fp(2, 1).eval_phi_deriv(0.5, 1).unwrap() + 1.0).abs() < 1e-15);
        // one-sided convention at the support edge
        assert_eq!(fp(2, 3).eval_phi_deriv(1.0, 2).unwrap(), 0.0);
        assert_eq!(fp(2, 3).eval_phi_deriv(1.2, 1).unwrap(), 0.0);
    }

    #[test]
    fn phi_derivative_rejections() {
        assert!(matches!(
            KernelSpec::sinc().eval_phi_deriv(0.0, 1),
            Err(DeconvError::UnsupportedKernel(_))
        ));
        assert!(fp(2, 1).eval_phi_deriv(0.0, 2).is_err());
        assert!(fp(2, 3).eval_phi_deriv(0.0, 3).is_err());
    }

    #[test]
    fn phi_derivatives_match_central_differences() {
        let step = 1e-5;
        for spec in [fp(2, 2), fp(2, 3), fp(4, 2), fp(2, 5)] {
            for i in 0..20 {
                let t = -0.95 + 1.9 * i as f64 / 19.0;
                let fd1 = (spec.eval_phi(t + step) - spec.eval_phi(t - step)) / (2.0 * step);
                let fd2 = (spec.eval_phi(t + step) - 2.0 * spec.eval_phi(t)
                    + spec.eval_phi(t - step))
                    / (step * step);
                assert!((spec.eval_phi_deriv(t, 1).unwrap() - fd1).abs() < 1e-6);
                assert!((spec.eval_phi_deriv(t, 2).unwrap() - fd2).abs() < 1e-4, "{spec} {t}");
            }
        }
    }

    #[test]
    fn sinc_values() {
        let l = KernelSpec::sinc();
        assert_eq!(l.eval_kernel(0.0), 1.0);
        assert_eq!(l.eval_kernel(1.0), 0.0);
        assert_eq!(sinc(-7.0), 0.0);
        assert!((l.eval_kernel(0.5) - 2.0 / PI).abs() < 1e-15);
        assert!((sin_pi(0.25) - (PI / 4.0).sin()).abs() < 1e-15);
        assert!((sin_pi(1.25) + (PI / 4.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn fp_kernel_matches_closed_form() {
        // phi = 1 - t^2 inverts to 2 (sin x - x cos x) / (pi x^3)
        let k = KernelEvaluator::new(fp(2, 1), 4097).unwrap();
        for x in [0.3f64, 1.0, 2.5, 7.0] {
            let exact = 2.0 * (x.sin() - x * x.cos()) / (PI * x * x * x);
            assert!((k.eval(x) - exact).abs() < 1e-6, "x={x}");
        }
        assert!((k.eval(0.0) - 2.0 / (3.0 * PI)).abs() < 1e-6);
    }

    #[test]
    fn kernel_is_even() {
        for spec in [fp(2, 1), fp(2, 2), fp(2, 3), KernelSpec::sinc()] {
            let k = KernelEvaluator::new(spec, 4097).unwrap();
            for i in 0..50 {
                let x = 0.37 * i as f64;
                assert!((k.eval(x) - k.eval(-x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn moments() {
        assert!((fp(2, 2).moments().unwrap().kappa - 4.0).abs() < 1e-14);
        assert!((fp(2, 3).moments().unwrap().kappa - 6.0).abs() < 1e-14);
        assert_eq!(fp(2, 3).moments().unwrap().order, KernelOrder::Second);
        assert!(matches!(
            KernelSpec::sinc().moments(),
            Err(DeconvError::UndefinedMoment(_))
        ));
        assert!(fp(2, 0).moments().is_err());
        assert_eq!(fp(4, 2).moments().unwrap().order, KernelOrder::Higher(4));
    }

    #[test]
    fn kappa_matches_finite_difference_of_phi() {
        // independent route: second central difference of phi_K at zero
        for spec in [fp(2, 1), fp(2, 2), fp(2, 3)] {
            let h = 1e-4;
            let fd = (spec.eval_phi(h) - 2.0 + spec.eval_phi(-h)) / (h * h);
            assert!((spec.moments().unwrap().kappa + fd).abs() < 1e-6, "{spec}: {} vs {fd}", spec.moments().unwrap().kappa);
        }
    }

    #[test]
    fn kappa_matches_direct_quadrature_for_smooth_kernel() {
        // x^2 K(x) ~ x^-2 for s = 3, so a long truncated window converges
        let spec = fp(2, 3);
        let k = KernelEvaluator::new(spec, 4097).unwrap();
        let grid = crate::quadrature::linspace(-300.0, 300.0, 60001);
        let vals: Vec<f64> = grid.iter().map(|&x| x * x * k.eval(x)).collect();
        let kappa = crate::quadrature::trapezoid(&grid, &vals);
        assert!((kappa - 6.0).abs() < 0.05, "kappa={kappa}");
    }

    #[test]
    fn kernel_unit_mass() {
        // int_{-A}^{A} K = (2/pi) int_0^1 phi(t) sin(A t) / t dt; this finite
        // window value is the reference, and it tends to 1 as A grows
        let a = 50.0;
        for spec in [fp(2, 1), fp(2, 2), fp(2, 3)] {
            let k = KernelEvaluator::new(spec, 4097).unwrap();
            let grid = crate::quadrature::linspace(-a, a, 20001);
            let vals: Vec<f64> = grid.iter().map(|&x| k.eval(x)).collect();
            let mass = crate::quadrature::trapezoid(&grid, &vals);
            let window = crate::quadrature::linspace(0.0, 1.0, 200001);
            let g: Vec<f64> = window
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        a
                    } else {
                        spec.eval_phi(t) * (a * t).sin() / t
                    }
                })
                .collect();
            let exact = 2.0 / PI * crate::quadrature::trapezoid(&window, &g);
            assert!((mass - exact).abs() < 1e-6, "{spec}: {mass} vs {exact}");
            assert!((mass - 1.0).abs() < 1e-3, "{spec}: {mass}");
        }
        assert_eq!(KernelSpec::sinc().eval_phi(0.0), 1.0);
    }

    #[test]
    fn parse_and_display_round_trip() {
        for name in ["sinc", "fp:r=2,s=1", "fp:r=2,s=2", "fp:r=2,s=3"] {
            let spec: KernelSpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
        }
        assert!("fp:r=3,s=2".parse::<KernelSpec>().is_err());
        assert!("gaussian".parse::<KernelSpec>().is_err());
        assert!("fp:r=2".parse::<KernelSpec>().is_err());
    }
}
