//! Kernel deconvolution: density estimation and local polynomial regression
//! when covariates are observed with additive error, plus the sinc-basis
//! minimum contrast estimator, analysis tools and a seeded simulator.

pub mod analysis;
pub mod deconv_kernel;
pub mod density;
pub mod error;
pub mod error_models;
pub mod io;
pub mod kernels;
pub mod min_contrast;
pub mod quadrature;
pub mod regression;
pub mod simulation;

pub use analysis::{RateExperiment, RateResult, TrueDensity};
pub use deconv_kernel::{BatchedSum, DeconvKernelPlan};
pub use density::{
    deconv_kde, deconv_kde_batched, default_grid, integrate_estimate, kde, ContaminatedSample,
    CurveEstimate, CurveMeta, ModelTag, PointFlag,
};
pub use error::{DeconvError, Result};
pub use error_models::{
    estimate_abs_phi_u, ErrorCf, ErrorFamily, ErrorModel, ErrorSpec, ReplicatedSample, TailClass,
};
pub use kernels::{KernelEvaluator, KernelFamily, KernelMoments, KernelOrder, KernelSpec};
pub use min_contrast::{
    compare_on_probes, pce_estimate, verify_theorem, PceConfig, PceEstimate, TheoremComparison,
    TheoremReport,
};
pub use quadrature::SpectralRule;
pub use regression::{deconv_local_polynomial, local_polynomial, EvalPath, RegressionConfig};
pub use simulation::{Scenario, ScenarioModel};

/// Splits `"a=1,b=2"` into key/value pairs.
pub(crate) fn parse_params(body: &str) -> Result<Vec<(String, String)>> {
    body.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| DeconvError::Parse(format!("expected key=value, got {item:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}
