//! Multi-chain posterior sampling and its summaries.

use cohortbayes_core::diagnostics::{ess, gelman_rubin, gelman_rubin_split, summarize, PosteriorSummary};
use cohortbayes_core::imputation::{BayesianBootstrapModel, ConjugateModel};
use cohortbayes_core::samplers::{run_alg1, run_alg2, run_alg3, Algorithm, ChainConfig, ChainOutput};
use cohortbayes_core::{stream_rng, CohortData, Error, Result};
use rayon::prelude::*;

use crate::config::ModelKind;

enum Fitted {
    Bootstrap(BayesianBootstrapModel),
    Conjugate(ConjugateModel),
}

fn run_one(cohort: &CohortData, model: &Fitted, config: &ChainConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = stream_rng(config.seed, chain as u64);
    match (model, config.algorithm) {
        (Fitted::Bootstrap(m), Algorithm::Alg1) => run_alg1(cohort, m, config, &mut rng),
        (Fitted::Bootstrap(m), Algorithm::Alg2) => run_alg2(cohort, m, config, &mut rng),
        (Fitted::Conjugate(m), Algorithm::Alg1) => run_alg1(cohort, m, config, &mut rng),
        (Fitted::Conjugate(m), Algorithm::Alg2) => run_alg2(cohort, m, config, &mut rng),
        (Fitted::Conjugate(m), Algorithm::Alg3) => run_alg3(cohort, m, config, &mut rng),
        (Fitted::Bootstrap(_), Algorithm::Alg3) => Err(Error::InvalidValue {
            what: "algorithm",
            detail: "alg3 needs the conjugate model".into(),
        }),
    }
}

/// Checks the configuration against the cohort without running anything.
pub fn validate(cohort: &CohortData, model: ModelKind, config: &ChainConfig) -> Result<()> {
    config.validate(cohort.d_beta())?;
    if model == ModelKind::Bootstrap && config.algorithm == Algorithm::Alg3 {
        return Err(Error::InvalidValue {
            what: "algorithm",
            detail: "alg3 needs the conjugate model".into(),
        });
    }
    Ok(())
}

/// Runs `chains` chains; chain `c` uses the stream `seed ^ c`.
pub fn run_chains(
    cohort: &CohortData,
    model: ModelKind,
    config: &ChainConfig,
    chains: usize,
    workers: usize,
) -> Result<Vec<ChainOutput>> {
    validate(cohort, model, config)?;
    let fitted = match model {
        ModelKind::Bootstrap => Fitted::Bootstrap(BayesianBootstrapModel::from_cohort(cohort)?),
        ModelKind::Conjugate => Fitted::Conjugate(ConjugateModel::fit(cohort)?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        (0..chains.max(1))
            .into_par_iter()
            .map(|c| run_one(cohort, &fitted, config, c))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub group: String,
    pub component: String,
    pub summary: PosteriorSummary,
    pub rhat: Option<f64>,
    pub rhat_split: Option<f64>,
    pub ess: Option<f64>,
}

/// Pools post-burn-in draws over chains for every component.
pub fn summarize_chains(
    outputs: &[ChainOutput],
    burn_in: usize,
    names: &[(String, String)],
    split: bool,
) -> Result<Vec<ComponentSummary>> {
    names
        .iter()
        .enumerate()
        .map(|(k, (group, component))| {
            let per_chain: Vec<Vec<f64>> = outputs.iter().map(|o| o.component(k, burn_in)).collect();
            let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            let multi = refs.len() >= 2;
            Ok(ComponentSummary {
                group: group.clone(),
                component: component.clone(),
                summary: summarize(&pooled, 0)?,
                rhat: if multi { gelman_rubin(&refs).ok() } else { None },
                rhat_split: if multi && split { gelman_rubin_split(&refs).ok() } else { None },
                ess: (pooled.len() >= 100)
                    .then(|| per_chain.iter().filter_map(|c| ess(c).ok()).sum::<f64>())
                    .filter(|e| *e > 0.0),
            })
        })
        .collect()
}
