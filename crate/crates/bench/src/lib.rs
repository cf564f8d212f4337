//! Shared fixtures for the benchmarks.

use ivdr_core::simulation::{generate_dataset, ScenarioConfig};
use ivdr_core::{Dataset, MethodConfig, VarianceMode};

/// One draw from the simulation design.
pub fn sample(n: usize, misspec: bool) -> Dataset {
    let cfg = ScenarioConfig {
        n,
        misspec_a: misspec,
        misspec_m: misspec,
        ..Default::default()
    };
    generate_dataset(&cfg, 7).expect("valid scenario").0
}

/// Method settings that skip the bootstrap so a point estimate is timed.
pub fn plug_in() -> MethodConfig {
    let mut cfg = MethodConfig::default();
    cfg.ci.variance_mode = Some(VarianceMode::IfPlugin);
    cfg
}
