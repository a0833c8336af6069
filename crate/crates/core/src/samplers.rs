//! Pseudo-marginal Metropolis-Hastings over the log-hazard ratio.
//!
//! Every driver shares one chain loop: propose `beta` by a Gaussian random
//! walk, propose fresh auxiliary randomness for the imputed covariates, and
//! accept or reject the pair jointly. On rejection the current imputation is
//! kept, which is what makes the chain target the exact marginal posterior.
//! The drivers differ only in how the auxiliary randomness is refreshed:
//!
//! * [`Algorithm::Alg1`]: independent copies from the restricted posterior
//!   predictive.
//! * [`Algorithm::Alg2`]: fresh `gamma`, autoregressive standard normals
//!   pushed through the model's normal-inversion map.
//! * [`Algorithm::Alg3`]: fresh `Sigma`, autoregressive normals for both the
//!   regression coefficients and the missing rows (one copy).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::imputation::{
    correlate, standard_normal_matrix, ConjugateModel, ImputationModel, NormalInversion,
};
use crate::linalg::{cholesky_lower, from_rows};
use crate::math::{lgamma, log, log1p};
use crate::survival::LikelihoodEvaluator;
use crate::{CohortData, Error, ImputationDraw, LogHazardRatio, Result};

/// Prior on the flattened `beta = (beta1, beta2)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PriorSpec {
    ImproperUniform,
    /// Independent location-scale Student-t components. `center` may be empty
    /// (all zero); `center` and `scale` may hold a single broadcast value.
    StudentT {
        df: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        center: Vec<f64>,
        scale: Vec<f64>,
    },
}

impl PriorSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PriorSpec::ImproperUniform => Ok(()),
            PriorSpec::StudentT { df, center, scale } => {
                if !(*df > 0.0) || !df.is_finite() {
                    return Err(Error::invalid("prior df", "must be positive"));
                }
                if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::invalid("prior scale", "must be positive"));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("prior center", "must be finite"));
                }
                for (what, len, allow_empty) in [("prior scale", scale.len(), false), ("prior center", center.len(), true)] {
                    let ok = len == dim || len == 1 || (allow_empty && len == 0);
                    if !ok {
                        return Err(Error::Dimension {
                            what,
                            expected: dim,
                            got: len,
                        });
                    }
                }
                Ok(())
            }
        }
    }
}

fn broadcast(values: &[f64], k: usize, default: f64) -> f64 {
    match values.len() {
        0 => default,
        1 => values[0],
        _ => values[k],
    }
}

/// Log prior density (up to nothing: the Student-t densities are normalized).
pub fn log_prior(beta: &[f64], spec: &PriorSpec) -> Result<f64> {
    spec.validate(beta.len())?;
    Ok(match spec {
        PriorSpec::ImproperUniform => 0.0,
        PriorSpec::StudentT { df, center, scale } => {
            let nu = *df;
            let norm = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(nu * core::f64::consts::PI);
            beta.iter()
                .enumerate()
                .map(|(k, &b)| {
                    let s = broadcast(scale, k, 1.0);
                    let t = (b - broadcast(center, k, 0.0)) / s;
                    norm - log(s) - 0.5 * (nu + 1.0) * log1p(t * t / nu)
                })
                .sum()
        }
    })
}

/// Gaussian random-walk kernel `beta + L eps` with `L L^T` the proposal
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalKernel {
    chol: DMatrix<f64>,
}

impl ProposalKernel {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            chol: cholesky_lower(cov, "proposal covariance")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn propose<R: Rng + ?Sized>(&self, beta: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = beta.to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            for (j, e) in eps.iter().enumerate().take(i + 1) {
                *o += self.chol[(i, j)] * e;
            }
        }
        out
    }
}

/// One random-walk proposal; factorizes `proposal_cov` on every call.
pub fn propose_beta<R: Rng + ?Sized>(beta: &[f64], proposal_cov: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let kernel = ProposalKernel::new(proposal_cov)?;
    if kernel.dim() != beta.len() {
        return Err(Error::Dimension {
            what: "proposal covariance",
            expected: beta.len(),
            got: kernel.dim(),
        });
    }
    Ok(kernel.propose(beta, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Algorithm {
    Alg1,
    Alg2,
    Alg3,
}

#[cfg(feature = "serde")]
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ChainConfig {
    pub algorithm: Algorithm,
    pub n_iters: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub burn_in: usize,
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub b_copies: usize,
    /// Autoregressive coefficient for the regression-coefficient normals
    /// (alg3 only).
    #[cfg_attr(feature = "serde", serde(default))]
    pub rho_xi: f64,
    /// Autoregressive coefficient for the missing-row normals (alg2 and
    /// alg3).
    #[cfg_attr(feature = "serde", serde(default))]
    pub rho_z: f64,
    /// Rows of the random-walk covariance over the flattened `beta`.
    pub proposal_cov: Vec<Vec<f64>>,
    pub prior: PriorSpec,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub init_beta: Option<Vec<f64>>,
}

impl ChainConfig {
    /// Checks the invariants for a `dim`-dimensional `beta`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_iters <= self.burn_in {
            return Err(Error::invalid("n_iters", "must exceed burn_in"));
        }
        if self.b_copies == 0 {
            return Err(Error::invalid("b_copies", "must be at least 1"));
        }
        for (what, rho) in [("rho_xi", self.rho_xi), ("rho_z", self.rho_z)] {
            if !(rho.abs() < 1.0) {
                return Err(Error::invalid(what, "must lie in (-1, 1)"));
            }
        }
        if self.algorithm == Algorithm::Alg3 && self.b_copies != 1 {
            return Err(Error::invalid("b_copies", "alg3 uses a single copy"));
        }
        if self.proposal_cov.len() != dim {
            return Err(Error::Dimension {
                what: "proposal covariance",
                expected: dim,
                got: self.proposal_cov.len(),
            });
        }
        if let Some(init) = &self.init_beta {
            if init.len() != dim {
                return Err(Error::Dimension {
                    what: "init_beta",
                    expected: dim,
                    got: init.len(),
                });
            }
            if init.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("init_beta", "must be finite"));
            }
        }
        self.prior.validate(dim)
    }

    pub fn proposal_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.proposal_cov, "proposal covariance")
    }
}

/// Persisted chain: every iteration's `beta`, acceptance flag and current
/// `log h`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub log_h: Vec<f64>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub config: ChainConfig,
}

impl ChainOutput {
    /// Draws of component `k` after discarding `burn_in` iterations.
    pub fn component(&self, k: usize, burn_in: usize) -> Vec<f64> {
        self.draws.iter().skip(burn_in).map(|d| d[k]).collect()
    }
}

/// How the auxiliary randomness behind the imputed covariates is refreshed.
pub trait AuxiliaryScheme {
    type Aux: Clone + PartialEq;

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)>;

    fn propose<R: Rng + ?Sized>(&self, current: &Self::Aux, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)>;
}

/// Independent draws from the restricted posterior predictive, one fresh
/// `gamma` per copy.
#[derive(Debug, Clone)]
pub struct FreshImputation<'m, M> {
    pub model: &'m M,
    pub copies: usize,
}

impl<M: ImputationModel> AuxiliaryScheme for FreshImputation<'_, M> {
    type Aux = ();

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<((), ImputationDraw)> {
        self.propose(&(), rng)
    }

    fn propose<R: Rng + ?Sized>(&self, _: &(), rng: &mut R) -> Result<((), ImputationDraw)> {
        let copies = (0..self.copies)
            .map(|_| self.model.draw_missing(rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(((), ImputationDraw::new(copies)?))
    }
}

/// Correlated normals pushed through the inversion map, fresh `gamma` per
/// copy.
#[derive(Debug, Clone)]
pub struct CorrelatedNormals<'m, M> {
    pub model: &'m M,
    pub copies: usize,
    pub rho: f64,
}

impl<M: NormalInversion> AuxiliaryScheme for CorrelatedNormals<'_, M> {
    type Aux = Vec<DMatrix<f64>>;

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)> {
        let (rows, cols) = self.model.aux_shape();
        let u: Vec<_> = (0..self.copies).map(|_| standard_normal_matrix(rows, cols, rng)).collect();
        let draw = self.invert_all(&u, rng)?;
        Ok((u, draw))
    }

    fn propose<R: Rng + ?Sized>(&self, current: &Self::Aux, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)> {
        let u: Vec<_> = current.iter().map(|u| correlate(u, self.rho, rng)).collect();
        let draw = self.invert_all(&u, rng)?;
        Ok((u, draw))
    }
}

impl<M: NormalInversion> CorrelatedNormals<'_, M> {
    fn invert_all<R: Rng + ?Sized>(&self, u: &[DMatrix<f64>], rng: &mut R) -> Result<ImputationDraw> {
        let copies = u
            .iter()
            .map(|u| {
                let gamma = self.model.draw_gamma(rng)?;
                self.model.invert(&gamma, u)
            })
            .collect::<Result<Vec<_>>>()?;
        ImputationDraw::new(copies)
    }
}

/// The alg3 scheme: fresh `Sigma`, correlated `U_xi` and `U_Z`, one copy.
#[derive(Debug, Clone)]
pub struct CorrelatedConjugate<'m> {
    pub model: &'m ConjugateModel,
    pub rho_xi: f64,
    pub rho_z: f64,
}

impl AuxiliaryScheme for CorrelatedConjugate<'_> {
    type Aux = crate::imputation::AuxiliaryNormals;

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)> {
        let post = self.model.posterior();
        let aux = crate::imputation::AuxiliaryNormals::standard(post.d_v(), post.d_z(), self.model.missing_rows(), rng);
        let draw = self.impute(&aux, rng)?;
        Ok((aux, draw))
    }

    fn propose<R: Rng + ?Sized>(&self, current: &Self::Aux, rng: &mut R) -> Result<(Self::Aux, ImputationDraw)> {
        let u_xi = correlate(&current.u_xi, self.rho_xi, rng);
        let u_z = correlate(&current.u_z, self.rho_z, rng);
        let aux = crate::imputation::AuxiliaryNormals { u_xi, u_z };
        let draw = self.impute(&aux, rng)?;
        Ok((aux, draw))
    }
}

impl CorrelatedConjugate<'_> {
    fn impute<R: Rng + ?Sized>(&self, aux: &crate::imputation::AuxiliaryNormals, rng: &mut R) -> Result<ImputationDraw> {
        let gamma = self.model.gamma_from(&aux.u_xi, rng)?;
        Ok(ImputationDraw::single(self.model.missing_from(&aux.u_z, &gamma)?))
    }
}

/// Current state of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<A> {
    pub beta: Vec<f64>,
    pub aux: A,
    pub draw: ImputationDraw,
    pub log_prior: f64,
    pub log_h_current: f64,
    pub accept_count: usize,
    pub iteration: usize,
}

/// `log p(beta~) + log h~ - log p(beta) - log h`; the random walk is
/// symmetric so no proposal terms appear.
pub fn log_acceptance_ratio(log_prior_current: f64, log_h_current: f64, log_prior_proposed: f64, log_h_proposed: f64) -> f64 {
    (log_prior_proposed - log_prior_current) + (log_h_proposed - log_h_current)
}

/// A pseudo-marginal chain over one cohort.
pub struct Chain<'a, S: AuxiliaryScheme> {
    evaluator: LikelihoodEvaluator<'a>,
    scheme: S,
    kernel: ProposalKernel,
    prior: PriorSpec,
    d_z: usize,
    state: ChainState<S::Aux>,
}

impl<'a, S: AuxiliaryScheme> Chain<'a, S> {
    pub fn new<R: Rng + ?Sized>(cohort: &'a CohortData, scheme: S, config: &ChainConfig, rng: &mut R) -> Result<Self> {
        let dim = cohort.d_beta();
        config.validate(dim)?;
        let kernel = ProposalKernel::new(&config.proposal_matrix()?)?;
        let beta = config.init_beta.clone().unwrap_or_else(|| vec![0.0; dim]);
        let mut evaluator = LikelihoodEvaluator::new(cohort);
        let (aux, draw) = scheme.initial(rng)?;
        let log_h_current = evaluator.log_h(&LogHazardRatio::from_flat(&beta, cohort.d_z())?, &draw)?;
        if !log_h_current.is_finite() {
            return Err(Error::NonFiniteAcceptance(0));
        }
        let log_prior = log_prior(&beta, &config.prior)?;
        Ok(Self {
            evaluator,
            scheme,
            kernel,
            prior: config.prior.clone(),
            d_z: cohort.d_z(),
            state: ChainState {
                beta,
                aux,
                draw,
                log_prior,
                log_h_current,
                accept_count: 0,
                iteration: 0,
            },
        })
    }

    pub fn state(&self) -> &ChainState<S::Aux> {
        &self.state
    }

    /// One Metropolis-Hastings iteration; returns whether it accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<bool> {
        let st = &mut self.state;
        st.iteration += 1;
        let beta_prop = self.kernel.propose(&st.beta, rng);
        let (aux_prop, draw_prop) = self.scheme.propose(&st.aux, rng)?;
        let log_h_prop = self
            .evaluator
            .log_h(&LogHazardRatio::from_flat(&beta_prop, self.d_z)?, &draw_prop)?;
        let log_prior_prop = log_prior(&beta_prop, &self.prior)?;
        let log_alpha = log_acceptance_ratio(st.log_prior, st.log_h_current, log_prior_prop, log_h_prop);
        if log_alpha.is_nan() || log_alpha == f64::INFINITY {
            return Err(Error::NonFiniteAcceptance(st.iteration));
        }
        let u: f64 = rng.random();
        let accept = log_alpha >= 0.0 || log(u) < log_alpha;
        if accept {
            st.beta = beta_prop;
            st.aux = aux_prop;
            st.draw = draw_prop;
            st.log_prior = log_prior_prop;
            st.log_h_current = log_h_prop;
            st.accept_count += 1;
        }
        Ok(accept)
    }

    /// Runs `config.n_iters` iterations and records every state.
    pub fn run<R: Rng + ?Sized>(mut self, config: &ChainConfig, rng: &mut R) -> Result<ChainOutput> {
        let n = config.n_iters;
        let mut draws = Vec::with_capacity(n);
        let mut accepted = Vec::with_capacity(n);
        let mut log_h = Vec::with_capacity(n);
        for _ in 0..n {
            accepted.push(self.step(rng)?);
            draws.push(self.state.beta.clone());
            log_h.push(self.state.log_h_current);
        }
        Ok(ChainOutput {
            draws,
            accepted,
            log_h,
            acceptance_rate: self.state.accept_count as f64 / n as f64,
            seed: config.seed,
            config: config.clone(),
        })
    }
}

fn expect_algorithm(config: &ChainConfig, algorithm: Algorithm) -> Result<()> {
    if config.algorithm != algorithm {
        return Err(Error::invalid("algorithm", alloc::format!("expected {algorithm:?}, got {:?}", config.algorithm)));
    }
    Ok(())
}

/// alg1: pseudo-marginal MH with fresh imputations every iteration.
pub fn run_alg1<M: ImputationModel, R: Rng + ?Sized>(
    cohort: &CohortData,
    model: &M,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    expect_algorithm(config, Algorithm::Alg1)?;
    let scheme = FreshImputation {
        model,
        copies: config.b_copies,
    };
    Chain::new(cohort, scheme, config, rng)?.run(config, rng)
}

/// alg2: correlated auxiliary normals with coefficient `rho_z`.
pub fn run_alg2<M: NormalInversion, R: Rng + ?Sized>(
    cohort: &CohortData,
    model: &M,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    expect_algorithm(config, Algorithm::Alg2)?;
    let scheme = CorrelatedNormals {
        model,
        copies: config.b_copies,
        rho: config.rho_z,
    };
    Chain::new(cohort, scheme, config, rng)?.run(config, rng)
}

/// alg3: fresh `Sigma`, correlated `U_xi` (`rho_xi`) and `U_Z`
/// (`rho_z`), one copy.
pub fn run_alg3<R: Rng + ?Sized>(
    cohort: &CohortData,
    model: &ConjugateModel,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    expect_algorithm(config, Algorithm::Alg3)?;
    let scheme = CorrelatedConjugate {
        model,
        rho_xi: config.rho_xi,
        rho_z: config.rho_z,
    };
    Chain::new(cohort, scheme, config, rng)?.run(config, rng)
}

/// `|log N(u; 0, I) + log N(u~; rho u, (1 - rho^2) I) - log N(u~; 0, I)
/// - log N(u; rho u~, (1 - rho^2) I)|`, zero up to rounding for every input.
pub fn detailed_balance_residual(u: &[f64], u_tilde: &[f64], rho: f64) -> f64 {
    assert_eq!(u.len(), u_tilde.len(), "auxiliary vectors must conform");
    let var = (1.0 - rho) * (1.0 + rho);
    // The normalizing constants are identical on both sides; the quadratic
    // forms are paired per coordinate as differences of squares so that
    // rho near 1 does not cost digits.
    let total: f64 = u
        .iter()
        .zip(u_tilde)
        .map(|(&a, &b)| {
            let forward = b - rho * a;
            let backward = a - rho * b;
            let marginal = 0.5 * (b - a) * (b + a);
            let transition = 0.5 * (backward - forward) * (backward + forward) / var;
            marginal + transition
        })
        .sum();
    total.abs()
}
