//! Composite Simpson rule on a symmetric frequency interval.
//!
//! Every Fourier-inversion integral in this crate runs through a
//! [`SpectralRule`]. Estimators that must agree to rounding (the sinc
//! deconvolution estimator and the minimum-contrast coefficients) share one
//! rule instance.

use crate::error::{DeconvError, Result};

/// Default number of quadrature nodes on `[-T, T]`.
pub const DEFAULT_NODES: usize = 4097;

/// Smallest accepted node count.
pub const MIN_NODES: usize = 257;

/// Equispaced Simpson nodes and weights on `[-half_width, half_width]`.
///
/// Simpson rather than trapezoid weights: the sinc kernel's integrand has a
/// nonzero slope at the support edge, where the trapezoid error is
/// `O(step^2)`.
///
/// Nodes are exactly antisymmetric (`t[2m - j] == -t[j]`), so integrands with
/// even or odd symmetry cancel to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRule {
    half_width: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralRule {
    pub fn new(half_width: f64, n_nodes: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(DeconvError::ConfigInvalid(format!(
                "quadrature half-width must be positive, got {half_width}"
            )));
        }
        if n_nodes < MIN_NODES || n_nodes.is_multiple_of(2) {
            return Err(DeconvError::ConfigInvalid(format!(
                "quad.nodes must be odd and >= {MIN_NODES}, got {n_nodes}"
            )));
        }
        let m = (n_nodes - 1) / 2;
        let step = half_width / m as f64;
        let nodes: Vec<f64> = (0..n_nodes)
            .map(|j| half_width * (j as f64 - m as f64) / m as f64)
            .collect();
        let weights = (0..n_nodes)
            .map(|j| {
                if j == 0 || j == n_nodes - 1 {
                    step / 3.0
                } else if j % 2 == 1 {
                    4.0 * step / 3.0
                } else {
                    2.0 * step / 3.0
                }
            })
            .collect();
        Ok(Self {
            half_width,
            nodes,
            weights,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node spacing.
    pub fn step(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nonnegative half of the rule, with weights folded so that for an even
    /// integrand `sum(w_half * f) == sum(w * f)` over the full rule.
    pub fn folded(&self) -> (Vec<f64>, Vec<f64>) {
        let m = (self.nodes.len() - 1) / 2;
        let nodes = self.nodes[m..].to_vec();
        let mut weights: Vec<f64> = self.weights[m..].iter().map(|w| 2.0 * w).collect();
        weights[0] *= 0.5;
        (nodes, weights)
    }

    /// Integrates `f` over the full rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Trapezoid integral of tabulated `values` over an increasing `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `n` equispaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}
