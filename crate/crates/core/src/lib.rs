//! Doubly robust instrumental-variable estimation of a treatment effect that
//! varies linearly with a baseline modifier.
//!
//! The estimators (two-stage least squares, the locally efficient IV
//! g-estimator and a linear-fluctuation TMLE) live in [`estimators`];
//! nuisance functions can be fitted parametrically or with a Super Learner
//! ([`super_learner`]). [`simulation`] reproduces a factorial Monte Carlo
//! study of the estimators under model misspecification.

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod linalg;
pub mod rng;
pub mod simulation;
pub mod super_learner;

pub use data::{validate_dataset, Dataset, Observation, RawTable};
pub use error::{Error, Result};
pub use estimators::{run_method, run_methods, EffectEstimate, Method, MethodConfig};
pub use inference::{CiConfig, Interval, VarianceMode};
pub use simulation::{run_scenario, summarize, ScenarioConfig, SimulationMetrics, TruthRecord};
