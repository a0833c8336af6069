//! Replicates spread over a thread pool.

use cohortbayes_core::simulation::{aggregate, run_replicate, Estimator, ReplicationTable, SimConfig, StudyChainSettings};
use cohortbayes_core::{Error, Result};
use rayon::prelude::*;

/// Same table as the sequential harness for any worker count: every
/// replicate draws from its own stream and outcomes are gathered in
/// replicate order.
pub fn run_study_parallel(
    cfg: &SimConfig,
    estimators: &[Estimator],
    chain: &StudyChainSettings,
    workers: usize,
) -> Result<ReplicationTable> {
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::Empty("estimators"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let outcomes = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, estimators, chain, r))
            .collect::<Vec<_>>()
    });
    aggregate(cfg, estimators, chain, outcomes)
}
