//! Synthetic case-cohort data and the replication harness.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::baselines::{build_weighted_view, newton_solve, WeightScheme, WeightedFit, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::diagnostics::quantile_type7;
use crate::imputation::BayesianBootstrapModel;
use crate::math::{exp, log, pow, sqrt};
use crate::samplers::{run_alg1, Algorithm, ChainConfig, PriorSpec};
use crate::{stream_rng, CohortData, Error, Result, SubjectRecord};

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Weibull proportional-hazards design with one standard-normal expensive
/// covariate: `lambda(t) = exp(beta0 z) eta nu t^(nu - 1)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimConfig {
    pub n: usize,
    pub beta0: f64,
    pub eta: f64,
    pub nu: f64,
    pub subcohort_p: f64,
    pub censor_point: f64,
    pub censor_point_prob: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            beta0: 0.0,
            eta: 0.01,
            nu: 2.0,
            subcohort_p: 0.04,
            censor_point: 3.0,
            censor_point_prob: 0.2,
            replicates: 200,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        for (what, v) in [("eta", self.eta), ("nu", self.nu), ("censor_point", self.censor_point)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(what, "must be positive"));
            }
        }
        if !(self.subcohort_p > 0.0 && self.subcohort_p <= 1.0) {
            return Err(Error::invalid("subcohort_p", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.censor_point_prob) {
            return Err(Error::invalid("censor_point_prob", "must lie in [0, 1]"));
        }
        if !self.beta0.is_finite() {
            return Err(Error::invalid("beta0", "must be finite"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", "must be at least 1"));
        }
        Ok(())
    }
}

/// A generated cohort as observed under the design, plus the same cohort with
/// every expensive covariate revealed (for the full-data estimator).
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub observed: CohortData,
    pub complete: CohortData,
}

/// Inverse-transform Weibull failure time for linear predictor `lp`.
pub fn weibull_time<R: Rng + ?Sized>(eta: f64, nu: f64, lp: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    pow(-log(u) / (eta * exp(lp)), 1.0 / nu)
}

fn censor_time<R: Rng + ?Sized>(point: f64, point_prob: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < point_prob {
        point
    } else {
        point * rng.random::<f64>()
    }
}

fn finish(rows: Vec<(f64, bool, bool, Vec<f64>, Vec<f64>, Vec<f64>)>) -> Result<SimulatedCohort> {
    let mut observed = Vec::with_capacity(rows.len());
    let mut complete = Vec::with_capacity(rows.len());
    for (time, event, sub, z, w, x) in rows {
        let selected = event || sub;
        observed.push(SubjectRecord::new(time, event, selected.then(|| z.clone()), w.clone(), x.clone()).with_subcohort(sub));
        complete.push(SubjectRecord::new(time, event, Some(z), w, x).with_subcohort(true));
    }
    Ok(SimulatedCohort {
        observed: CohortData::new(observed)?,
        complete: CohortData::new(complete)?,
    })
}

/// Draws one cohort: `Z ~ N(0, 1)`, Weibull failure times, censoring at
/// `censor_point` with probability `censor_point_prob` and otherwise
/// uniform on `(0, censor_point)`, selection `A = Delta or Bernoulli(p)`.
pub fn gen_cohort<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimulatedCohort> {
    cfg.validate()?;
    let rows = (0..cfg.n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            let t = weibull_time(cfg.eta, cfg.nu, cfg.beta0 * z, rng);
            let c = censor_time(cfg.censor_point, cfg.censor_point_prob, rng);
            let sub = rng.random::<f64>() < cfg.subcohort_p;
            (t.min(c), t <= c, sub, vec![z], vec![], vec![])
        })
        .collect();
    finish(rows)
}

/// Synthetic stand-in for the application: 9 expensive covariates, 7
/// confounders (age, sex, waist, BMI and three activity dummies) and 5
/// auxiliary covariates (log(1 + intake)).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AnalogueConfig {
    pub n: usize,
    pub subcohort_p: f64,
    /// Log-hazard ratios of the expensive covariates.
    pub beta1: Vec<f64>,
    /// Log-hazard ratios of the confounders.
    pub beta2: Vec<f64>,
    pub eta: f64,
    pub nu: f64,
    pub follow_up: f64,
    /// Probability of being followed to the end of the study.
    pub full_follow_up_prob: f64,
    pub seed: u64,
}

impl Default for AnalogueConfig {
    fn default() -> Self {
        let hr: [f64; 9] = [0.97, 0.86, 1.18, 1.39, 0.99, 0.91, 1.11, 0.99, 0.78];
        Self {
            n: 22_000,
            subcohort_p: 0.04,
            beta1: hr.iter().map(|h| log(*h)).collect(),
            beta2: vec![0.3, 0.15, 0.35, 0.45, 0.25, 0.15, 0.1],
            eta: 1.8e-4,
            nu: 2.0,
            follow_up: 11.0,
            full_follow_up_prob: 0.85,
            seed: 0,
        }
    }
}

impl AnalogueConfig {
    pub const D_Z: usize = 9;
    pub const D_W: usize = 7;
    pub const D_X: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if self.beta1.len() != Self::D_Z {
            return Err(Error::Dimension {
                what: "beta1",
                expected: Self::D_Z,
                got: self.beta1.len(),
            });
        }
        if self.beta2.len() != Self::D_W {
            return Err(Error::Dimension {
                what: "beta2",
                expected: Self::D_W,
                got: self.beta2.len(),
            });
        }
        if self.n == 0 || !(self.subcohort_p > 0.0 && self.subcohort_p <= 1.0) {
            return Err(Error::invalid("analogue design", "n must be positive and p in (0, 1]"));
        }
        for (what, v) in [("eta", self.eta), ("nu", self.nu), ("follow_up", self.follow_up)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(what, "must be positive"));
            }
        }
        Ok(())
    }

    /// True flattened `beta = (beta1, beta2)`.
    pub fn true_beta(&self) -> Vec<f64> {
        self.beta1.iter().chain(&self.beta2).copied().collect()
    }
}

/// Draws one analogue cohort. Each expensive covariate depends linearly on
/// the confounders and intakes with unit-scale correlated residuals.
pub fn gen_application_cohort<R: Rng + ?Sized>(cfg: &AnalogueConfig, rng: &mut R) -> Result<SimulatedCohort> {
    cfg.validate()?;
    let (dz, dw, dx) = (AnalogueConfig::D_Z, AnalogueConfig::D_W, AnalogueConfig::D_X);
    // Residual covariance AR(1) with coefficient 0.4, factored directly:
    // e_k = 0.4 e_{k-1} + sqrt(1 - 0.16) u_k.
    let ar = 0.4;
    let ar_scale = sqrt(1.0 - ar * ar);
    let rows = (0..cfg.n)
        .map(|_| {
            let mut g = || -> f64 { StandardNormal.sample(rng) };
            let age = g();
            let body = g();
            let waist = 0.8 * body + 0.6 * g();
            let bmi = 0.8 * body + 0.6 * g();
            let sex = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let a: f64 = rng.random();
            let activity = [a < 0.3, (0.3..0.55).contains(&a), (0.55..0.75).contains(&a)].map(|b| if b { 1.0 } else { 0.0 });
            let w = vec![age, sex, waist, bmi, activity[0], activity[1], activity[2]];
            let mut g = || -> f64 { StandardNormal.sample(rng) };
            let x: Vec<f64> = (0..dx).map(|k| log(1.0 + exp(3.0 + 0.2 * k as f64 + 0.5 * g()))).collect();
            let mut e = 0.0;
            let z: Vec<f64> = (0..dz)
                .map(|k| {
                    e = if k == 0 { g() } else { ar * e + ar_scale * g() };
                    let diet = x[k % dx] - (3.0 + 0.2 * (k % dx) as f64);
                    0.8 * diet + 0.15 * w[k % dw] - 0.1 * w[(k + 3) % dw] + 0.8 * e
                })
                .collect();
            let lp: f64 = z.iter().zip(&cfg.beta1).map(|(a, b)| a * b).sum::<f64>()
                + w.iter().zip(&cfg.beta2).map(|(a, b)| a * b).sum::<f64>();
            let t = weibull_time(cfg.eta, cfg.nu, lp, rng);
            let c = censor_time(cfg.follow_up, cfg.full_follow_up_prob, rng);
            let sub = rng.random::<f64>() < cfg.subcohort_p;
            (t.min(c), t <= c, sub, z, w, x)
        })
        .collect();
    finish(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Estimator {
    Full,
    Bayes,
    Prentice,
    Ipw,
    PostStrat,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Full,
        Estimator::Bayes,
        Estimator::PostStrat,
        Estimator::Ipw,
        Estimator::Prentice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Full => "full",
            Estimator::Bayes => "bayes",
            Estimator::Prentice => "prentice",
            Estimator::Ipw => "ipw",
            Estimator::PostStrat => "post_strat",
        }
    }
}

/// Sampler settings for the Bayes estimator inside a study.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct StudyChainSettings {
    pub burn_in: usize,
    pub kept: usize,
    pub b_copies: usize,
    /// Proposal variance multiplier on the post-stratified robust variance.
    pub proposal_scale: f64,
}

impl Default for StudyChainSettings {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            kept: 5000,
            b_copies: 1,
            proposal_scale: 4.0,
        }
    }
}

/// Point estimate and 95% interval of one estimator in one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ReplicateResult {
    pub replicate: usize,
    pub estimates: Vec<(Estimator, IntervalEstimate)>,
    pub newton_iterations: usize,
    pub step_halvings: usize,
    pub acceptance_rate: Option<f64>,
}

fn checked_fit(view_cohort: &CohortData, scheme: &WeightScheme) -> Result<WeightedFit> {
    let view = build_weighted_view(view_cohort, scheme)?;
    let fit = newton_solve(&view, &vec![0.0; view.dim()], DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if !fit.converged {
        return Err(Error::invalid("newton_solve", "did not converge"));
    }
    Ok(fit)
}

fn wald(fit: &WeightedFit) -> IntervalEstimate {
    let (lo, hi) = fit.wald_interval(0, Z_975);
    IntervalEstimate {
        estimate: fit.beta_hat[0],
        lo,
        hi,
    }
}

/// Fits the requested estimators to replicate `index` (stream `seed ^ index`).
pub fn run_replicate(
    cfg: &SimConfig,
    estimators: &[Estimator],
    chain: &StudyChainSettings,
    index: usize,
) -> Result<ReplicateResult> {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let data = gen_cohort(cfg, &mut rng)?;
    let mut out = ReplicateResult {
        replicate: index,
        estimates: Vec::with_capacity(estimators.len()),
        newton_iterations: 0,
        step_halvings: 0,
        acceptance_rate: None,
    };
    let record = |fit: &WeightedFit, out: &mut ReplicateResult| {
        out.newton_iterations += fit.iterations;
        out.step_halvings += fit.step_halvings;
        wald(fit)
    };
    let post_strat = if estimators.iter().any(|e| matches!(e, Estimator::PostStrat | Estimator::Bayes)) {
        Some(checked_fit(&data.observed, &WeightScheme::POST_STRAT))
    } else {
        None
    };
    for &est in estimators {
        let value = match est {
            Estimator::Full => {
                let fit = checked_fit(&data.complete, &WeightScheme::FULL)?;
                record(&fit, &mut out)
            }
            Estimator::Prentice => {
                let fit = checked_fit(&data.observed, &WeightScheme::PRENTICE)?;
                record(&fit, &mut out)
            }
            Estimator::Ipw => {
                let fit = checked_fit(&data.observed, &WeightScheme::ipw(cfg.subcohort_p))?;
                record(&fit, &mut out)
            }
            Estimator::PostStrat => {
                let fit = post_strat.clone().expect("fitted above")?;
                record(&fit, &mut out)
            }
            Estimator::Bayes => {
                let (var, init) = match post_strat.as_ref().expect("fitted above") {
                    Ok(fit) => (fit.robust_cov[0][0], fit.beta_hat[0]),
                    Err(_) => {
                        let full = checked_fit(&data.complete, &WeightScheme::FULL)?;
                        (full.naive_cov[0][0], 0.0)
                    }
                };
                let config = ChainConfig {
                    algorithm: Algorithm::Alg1,
                    n_iters: chain.burn_in + chain.kept,
                    burn_in: chain.burn_in,
                    b_copies: chain.b_copies,
                    rho_xi: 0.0,
                    rho_z: 0.0,
                    proposal_cov: vec![vec![chain.proposal_scale * var]],
                    prior: PriorSpec::ImproperUniform,
                    seed: cfg.seed ^ index as u64,
                    init_beta: Some(vec![init]),
                };
                let model = BayesianBootstrapModel::from_cohort(&data.observed)?;
                let output = run_alg1(&data.observed, &model, &config, &mut rng)?;
                out.acceptance_rate = Some(output.acceptance_rate);
                let kept = output.component(0, chain.burn_in);
                IntervalEstimate {
                    estimate: crate::math::mean(&kept),
                    lo: quantile_type7(&kept, 0.025)?,
                    hi: quantile_type7(&kept, 0.975)?,
                }
            }
        };
        out.estimates.push((est, value));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TableRow {
    pub estimator: String,
    pub bias: f64,
    pub esd: f64,
    pub rmse: f64,
    /// `rmse_full^2 / rmse^2`; NaN when the full estimator was not run.
    pub re: f64,
    /// Fraction of replicates whose interval covers the truth.
    pub coverage: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ReplicationTable {
    pub rows: Vec<TableRow>,
    pub truth: f64,
    pub replicates_requested: usize,
    pub replicates_failed: usize,
    /// `(replicate, error message)` for every excluded replicate.
    pub failures: Vec<(usize, String)>,
    pub newton_iterations: usize,
    pub step_halvings: usize,
    pub mean_acceptance_rate: Option<f64>,
    pub config: SimConfig,
    pub chain: StudyChainSettings,
}

impl ReplicationTable {
    pub fn row(&self, estimator: Estimator) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.estimator == estimator.name())
    }
}

/// Summarizes replicate outcomes (in replicate order) into a table.
pub fn aggregate(
    cfg: &SimConfig,
    estimators: &[Estimator],
    chain: &StudyChainSettings,
    outcomes: Vec<Result<ReplicateResult>>,
) -> Result<ReplicationTable> {
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((r, alloc::format!("{e}"))),
        }
    }
    if ok.is_empty() {
        return Err(Error::Empty("successful replicates"));
    }
    let truth = cfg.beta0;
    let r = ok.len() as f64;
    let mut rows: Vec<TableRow> = estimators
        .iter()
        .map(|&est| {
            let vals: Vec<IntervalEstimate> = ok
                .iter()
                .map(|rep| rep.estimates.iter().find(|(e, _)| *e == est).expect("every estimator recorded").1)
                .collect();
            let points: Vec<f64> = vals.iter().map(|v| v.estimate).collect();
            let mean = crate::math::mean(&points);
            let esd = if points.len() > 1 { sqrt(crate::math::sample_variance(&points)) } else { 0.0 };
            let mse = points.iter().map(|p| (p - truth) * (p - truth)).sum::<f64>() / r;
            let coverage = vals.iter().filter(|v| v.lo <= truth && truth <= v.hi).count() as f64 / r;
            TableRow {
                estimator: String::from(est.name()),
                bias: mean - truth,
                esd,
                rmse: sqrt(mse),
                re: f64::NAN,
                coverage,
                replicates: ok.len(),
            }
        })
        .collect();
    if let Some(full) = rows.iter().find(|row| row.estimator == Estimator::Full.name()).map(|row| row.rmse) {
        for row in rows.iter_mut() {
            row.re = (full * full) / (row.rmse * row.rmse);
        }
    }
    let rates: Vec<f64> = ok.iter().filter_map(|o| o.acceptance_rate).collect();
    Ok(ReplicationTable {
        rows,
        truth,
        replicates_requested: cfg.replicates,
        replicates_failed: failures.len(),
        failures,
        newton_iterations: ok.iter().map(|o| o.newton_iterations).sum(),
        step_halvings: ok.iter().map(|o| o.step_halvings).sum(),
        mean_acceptance_rate: (!rates.is_empty()).then(|| crate::math::mean(&rates)),
        config: cfg.clone(),
        chain: chain.clone(),
    })
}

/// Runs every replicate in order on the calling thread.
pub fn run_study(cfg: &SimConfig, estimators: &[Estimator], chain: &StudyChainSettings) -> Result<ReplicationTable> {
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::Empty("estimators"));
    }
    let outcomes = (0..cfg.replicates).map(|r| run_replicate(cfg, estimators, chain, r)).collect();
    aggregate(cfg, estimators, chain, outcomes)
}
