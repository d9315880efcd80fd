//! Bayesian response-adaptive randomization for a composite endpoint of
//! mortality and organ-support-free days (OSFD).
//!
//! The crate is organized bottom-up:
//!
//! - [`outcome`]: the OSFD transform, arm parameters and the synthetic patient generator.
//! - [`tn`]: truncated-normal moments, densities and sampling.
//! - [`posterior`]: the Gibbs sampler for the spike + censoring-mass + truncated-normal
//!   mixture and the posterior summaries built on it.
//! - [`allocation`]: Rules I-III, fixed randomization, Thompson sampling, the Trippa
//!   procedure and arm suspension.
//! - [`stopping`]: alpha-spending functions and simulation-calibrated critical values.
//! - [`trial`]: the staged trial engine and the replication harness.
//! - [`asymptotics`]: exact likelihood, score, Fisher information and delta-method checks.

pub mod allocation;
pub mod asymptotics;
mod error;
pub mod outcome;
pub mod posterior;
pub mod rng;
pub mod stopping;
pub mod tn;
pub mod trial;

pub use error::{Error, Result};
pub use outcome::{ArmModel, PatientRecord, ScenarioName, ScenarioSpec, TransformConstants};
pub use posterior::{McmcConfig, PosteriorSample};
pub use rng::StreamKey;
pub use stopping::{SpendingFunction, SpendingSchedule};
pub use trial::{RuleName, TrialConfig, TrialResult};

/// Version string embedded in every emitted file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
