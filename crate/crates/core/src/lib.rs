//! Bayesian case-cohort Cox regression.
//!
//! The posterior of the log-hazard ratio is proportional to the prior times
//! the Breslow partial likelihood averaged over the restricted posterior
//! predictive distribution of the unmeasured expensive covariates. This crate
//! samples it with pseudo-marginal Metropolis-Hastings ([`samplers`]), using
//! either a Bayesian bootstrap or a conjugate multivariate-normal regression
//! model for the missing covariates ([`imputation`]).
//!
//! The crate is `no_std` (it needs `alloc`); file formats, the CLI and the
//! parallel study harness live in the `cohortbayes` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod baselines;
pub mod compositional;
pub mod diagnostics;
mod error;
pub mod imputation;
pub mod linalg;
pub mod math;
pub mod samplers;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};
pub use survival::{CohortData, ImputationDraw, LogHazardRatio, SubjectRecord};

/// Deterministic generator used for every random stream in the crate.
pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Stream for chain (or replicate) `index` under a run seed: `seed ^ index`.
pub fn stream_rng(seed: u64, index: u64) -> ChainRng {
    use rand::SeedableRng;
    ChainRng::seed_from_u64(seed ^ index)
}
