//! Fixtures shared by the benchmarks.

use deconv_core::simulation::{generate, ScenarioConfig};
use deconv_core::ContaminatedSample;

/// Sample from the `fig31` preset at size `n`.
pub fn fig31_sample(n: usize) -> ContaminatedSample {
    let cfg = ScenarioConfig {
        n,
        ..ScenarioConfig::preset("fig31").expect("preset exists")
    };
    generate(&cfg.resolve().expect("preset resolves")).expect("preset generates")
}
