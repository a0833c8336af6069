//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

use std::time::Instant;

use cohortbayes::core::baselines::{
    build_weighted_view, fit_scheme, weighted_information, weighted_log_likelihood, weighted_score, WeightScheme,
};
use cohortbayes::core::compositional::composition_shift_hr;
use cohortbayes::core::diagnostics::{ess, gelman_rubin};
use cohortbayes::core::imputation::{
    phi_xi, sample_sigma, standard_normal_matrix, BayesianBootstrapModel, ConjugateModel, RestrictedPosterior,
};
use cohortbayes::core::samplers::{
    detailed_balance_residual, run_alg1, run_alg2, Algorithm, AuxiliaryScheme, Chain, ChainConfig, ChainOutput,
    CorrelatedNormals, FreshImputation, PriorSpec,
};
use cohortbayes::core::simulation::{gen_application_cohort, gen_cohort, AnalogueConfig, Estimator, SimConfig, StudyChainSettings};
use cohortbayes::core::{stream_rng, CohortData, SubjectRecord};
use cohortbayes::config::ModelKind;
use cohortbayes::fit::run_chains;
use cohortbayes::study::run_study_parallel;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEED: u64 = 20240101;

type Outcome = (bool, String);

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Posterior mean and its Monte Carlo standard error.
fn mean_mcse(v: &[f64]) -> (f64, f64) {
    let e = ess(v).unwrap_or(1.0).max(1.0);
    (mean(v), sd(v) / e.sqrt())
}

fn table1(beta0: f64) -> cohortbayes::core::simulation::ReplicationTable {
    let cfg = SimConfig {
        n: 2000,
        beta0,
        eta: 0.01,
        nu: 2.0,
        subcohort_p: 0.04,
        replicates: 200,
        seed: SEED,
        ..SimConfig::default()
    };
    let chain = StudyChainSettings {
        burn_in: 1000,
        kept: 5000,
        b_copies: 1,
        ..StudyChainSettings::default()
    };
    run_study_parallel(&cfg, &Estimator::ALL, &chain, workers()).expect("study runs")
}

fn criterion_1() -> Outcome {
    let t = table1(0.0);
    let bayes = t.row(Estimator::Bayes).unwrap();
    let ps = t.row(Estimator::PostStrat).unwrap();
    let ok = within(bayes.bias, -0.03, 0.04)
        && within(bayes.esd, 0.13, 0.20)
        && within(bayes.re, 0.40, 0.65)
        && within(ps.re, 0.27, 0.45)
        && within(bayes.coverage, 0.91, 0.98)
        && t.replicates_failed == 0;
    let detail = format!(
        "Bayes bias {:.4} esd {:.4} RE {:.3} coverage {:.3}; post-strat RE {:.3}; {} of {} replicates used",
        bayes.bias, bayes.esd, bayes.re, bayes.coverage, ps.re, bayes.replicates, t.replicates_requested
    );
    (ok, detail)
}

fn criterion_2() -> Outcome {
    let t = table1(-0.3);
    let rmse = |e| t.row(e).unwrap().rmse;
    let (bayes, ps) = (rmse(Estimator::Bayes), rmse(Estimator::PostStrat));
    let ok = (bayes / 0.146 - 1.0).abs() <= 0.25 && (ps / 0.207 - 1.0).abs() <= 0.25;
    let detail = format!(
        "RMSE Bayes {bayes:.4} (0.146), post-strat {ps:.4} (0.207); prentice {:.4}, ipw {:.4}",
        rmse(Estimator::Prentice),
        rmse(Estimator::Ipw)
    );
    (ok, detail)
}

// Tiny discrete instance: six subjects with unit-spaced times, the first
// three failing, two expensive covariates missing.
const TINY_Z: [Option<f64>; 6] = [Some(0.0), None, Some(1.0), Some(-1.0), None, Some(1.0)];
const GRID_LO: f64 = -4.0;
const GRID_STEP: f64 = 0.2;
const GRID_POINTS: usize = 41;

fn tiny_cohort() -> CohortData {
    let recs = TINY_Z
        .iter()
        .enumerate()
        .map(|(i, z)| SubjectRecord::new((i + 1) as f64, i < 3, z.map(|v| vec![v]), vec![], vec![]))
        .collect();
    CohortData::new(recs).unwrap()
}

fn tiny_log_pl(beta: f64, z: &[f64; 6]) -> f64 {
    (0..3)
        .map(|e| beta * z[e] - z[e..].iter().map(|v| (beta * v).exp()).sum::<f64>().ln())
        .sum()
}

/// `p(beta) E[h]` up to a constant: the Bayesian bootstrap puts mass
/// `(1 + [i = k]) / (m (m + 1))` on the pair of support indices `(i, k)`.
fn tiny_target(beta: f64) -> f64 {
    let support: Vec<f64> = TINY_Z.iter().flatten().copied().collect();
    let m = support.len() as f64;
    let mut eh = 0.0;
    for (i, &a) in support.iter().enumerate() {
        for (k, &b) in support.iter().enumerate() {
            let mut z = [0.0; 6];
            for (slot, v) in TINY_Z.iter().enumerate() {
                z[slot] = v.unwrap_or(0.0);
            }
            z[1] = a;
            z[4] = b;
            let p = if i == k { 2.0 } else { 1.0 } / (m * (m + 1.0));
            eh += p * tiny_log_pl(beta, &z).exp();
        }
    }
    let t = beta / 2.0;
    eh * (1.0 + t * t / 3.0).powf(-2.0)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn bin_of(beta: f64) -> usize {
    let pos = ((beta - GRID_LO) / GRID_STEP + 0.5).floor();
    if pos >= 0.0 && pos < GRID_POINTS as f64 {
        pos as usize
    } else {
        GRID_POINTS
    }
}

fn tiny_oracle_bins() -> Vec<f64> {
    let edge = |j: usize| GRID_LO + (j as f64 - 0.5) * GRID_STEP;
    let mut p: Vec<f64> = (0..GRID_POINTS).map(|j| simpson(tiny_target, edge(j), edge(j + 1), 64)).collect();
    let (lo, hi) = (edge(0), edge(GRID_POINTS));
    let outside = simpson(tiny_target, lo - 2000.0, lo, 2_000_000) + simpson(tiny_target, hi, hi + 2000.0, 2_000_000);
    p.push(outside);
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}

fn tiny_histogram<S: AuxiliaryScheme>(cohort: &CohortData, scheme: S, config: &ChainConfig, stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(config.seed, stream);
    let mut chain = Chain::new(cohort, scheme, config, &mut rng).unwrap();
    let mut counts = vec![0usize; GRID_POINTS + 1];
    for it in 0..config.n_iters {
        chain.step(&mut rng).unwrap();
        if it >= config.burn_in {
            counts[bin_of(chain.state().beta[0])] += 1;
        }
    }
    let kept = (config.n_iters - config.burn_in) as f64;
    counts.iter().map(|&c| c as f64 / kept).collect()
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn criterion_3() -> Outcome {
    let cohort = tiny_cohort();
    let model = BayesianBootstrapModel::from_cohort(&cohort).unwrap();
    let oracle = tiny_oracle_bins();
    let config = |algorithm, rho| ChainConfig {
        algorithm,
        n_iters: 2_000_000,
        burn_in: 10_000,
        b_copies: 1,
        rho_xi: 0.0,
        rho_z: rho,
        proposal_cov: vec![vec![4.0]],
        prior: PriorSpec::StudentT {
            df: 3.0,
            center: vec![],
            scale: vec![2.0],
        },
        seed: SEED,
        init_beta: None,
    };
    let h1 = tiny_histogram(&cohort, FreshImputation { model: &model, copies: 1 }, &config(Algorithm::Alg1, 0.0), 0);
    let scheme = CorrelatedNormals {
        model: &model,
        copies: 1,
        rho: 0.995,
    };
    let h2 = tiny_histogram(&cohort, scheme, &config(Algorithm::Alg2, 0.995), 1);
    let (tv1, tv2) = (total_variation(&oracle, &h1), total_variation(&oracle, &h2));
    (
        tv1 < 0.02 && tv2 < 0.02,
        format!("TV alg1 {tv1:.4}, alg2(rho 0.995) {tv2:.4}; oracle mass outside the grid {:.4}", oracle[GRID_POINTS]),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = stream_rng(SEED, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let dim = rng.random_range(1..=200);
        let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rho = rng.random_range(-0.999..0.999);
        worst = worst.max(detailed_balance_residual(&u, &v, rho));
    }
    (worst < 1e-10, format!("largest residual {worst:.3e} over 1e5 triples"))
}

fn criterion_5() -> Outcome {
    let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 0.5, 0.1, -0.2, 0.1, 0.8]);
    let xi_hat = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
    let post = RestrictedPosterior::new(xi_hat.clone(), c.clone(), DMatrix::identity(2, 2), 10).unwrap();
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, -0.6, -0.6, 1.0]);
    let n = 100_000;
    let d = 6;
    let mut rng = stream_rng(SEED, 5);
    let mut sum = vec![0.0; d];
    let mut outer = vec![vec![0.0; d]; d];
    for _ in 0..n {
        let dev = phi_xi(&standard_normal_matrix(3, 2, &mut rng), &sigma, &post).unwrap() - &xi_hat;
        // column-major vec
        let v: Vec<f64> = dev.iter().copied().collect();
        for i in 0..d {
            sum[i] += v[i];
            for j in 0..d {
                outer[i][j] += v[i] * v[j];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            // Cov(vec xi) = Sigma (x) C
            let kron = sigma[(i / 3, j / 3)] * c[(i % 3, j % 3)];
            let scale = (sigma[(i / 3, i / 3)] * c[(i % 3, i % 3)] * sigma[(j / 3, j / 3)] * c[(j % 3, j % 3)]).sqrt();
            let emp = outer[i][j] / n as f64 - sum[i] * sum[j] / (n as f64 * n as f64);
            worst = worst.max((emp - kron).abs() / scale);
        }
    }

    let (psi, n_s) = (3.0, 12usize);
    let scalar = RestrictedPosterior::new(
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, psi),
        n_s,
    )
    .unwrap();
    let iw_mean = (0..n).map(|_| sample_sigma(&scalar, &mut rng).unwrap()[(0, 0)]).sum::<f64>() / n as f64;
    let iw_err = (iw_mean / (psi / (n_s as f64 - 2.0)) - 1.0).abs();
    (
        worst < 0.03 && iw_err < 0.02,
        format!("vec-covariance worst relative error {worst:.4}; inverse-Wishart mean relative error {iw_err:.4}"),
    )
}

fn criterion_6() -> Outcome {
    // Hazard ratios and log-ratio SDs of the eight other fatty acids.
    let hr = [0.97, 0.86, 1.18, 1.39, 0.91, 1.11, 0.99, 0.78];
    let sd = [0.27, 0.26, 0.26, 0.07, 0.31, 0.24, 0.70, 0.26];
    let v = composition_shift_hr(&hr, &sd, 0.025, None).unwrap();
    ((v - 1.10).abs() <= 0.005, format!("hazard factor {v:.4}"))
}

fn chain_config(algorithm: Algorithm, n_iters: usize, burn_in: usize, cov: Vec<Vec<f64>>, rho: f64, b: usize) -> ChainConfig {
    ChainConfig {
        algorithm,
        n_iters,
        burn_in,
        b_copies: b,
        rho_xi: rho,
        rho_z: rho,
        proposal_cov: cov,
        prior: PriorSpec::ImproperUniform,
        seed: SEED,
        init_beta: None,
    }
}

fn kept(out: &ChainOutput, k: usize) -> Vec<f64> {
    out.component(k, out.config.burn_in)
}

fn criterion_7() -> Outcome {
    let cfg = SimConfig {
        n: 2000,
        beta0: 0.3,
        subcohort_p: 1.0,
        seed: SEED,
        ..SimConfig::default()
    };
    let cohort = gen_cohort(&cfg, &mut stream_rng(SEED, 7)).unwrap().observed;
    let schemes = [WeightScheme::FULL, WeightScheme::PRENTICE, WeightScheme::ipw(1.0), WeightScheme::POST_STRAT];
    let fits: Vec<_> = schemes.iter().map(|s| fit_scheme(&cohort, s).unwrap()).collect();
    let mle = fits[0].beta_hat[0];
    let spread = fits.iter().map(|f| (f.beta_hat[0] - mle).abs()).fold(0.0, f64::max);

    let model = BayesianBootstrapModel::from_cohort(&cohort).unwrap();
    let var = 2.0 * fits[0].robust_cov[0][0];
    let out = run_alg1(&cohort, &model, &chain_config(Algorithm::Alg1, 60_000, 5_000, vec![vec![var]], 0.0, 1), &mut stream_rng(SEED, 70)).unwrap();
    let draws = kept(&out, 0);
    let (post_mean, post_sd) = (mean(&draws), sd(&draws));
    let gap = fits.iter().map(|f| (f.beta_hat[0] - post_mean).abs()).fold(0.0, f64::max);
    (
        spread < 1e-8 && gap < 2.0 * post_sd,
        format!("MLE {mle:.5}, posterior mean {post_mean:.5} (sd {post_sd:.5}); scheme spread {spread:.2e}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = stream_rng(SEED, 8);
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1.0);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.random_range(5..=50);
        let (d_z, d_w) = (rng.random_range(1..=3), rng.random_range(0..=2));
        let p = rng.random_range(0.2..1.0);
        let recs: Vec<SubjectRecord> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..d_z).map(|_| StandardNormal.sample(&mut rng)).collect();
                let w: Vec<f64> = (0..d_w).map(|_| StandardNormal.sample(&mut rng)).collect();
                // Coarse times leave ties.
                let t = (rng.random_range(1..=n / 2 + 1)) as f64;
                let event = rng.random::<f64>() < 0.4;
                let sub = rng.random::<f64>() < p;
                let selected = event || sub;
                SubjectRecord::new(t, event, selected.then_some(z), w, vec![]).with_subcohort(sub)
            })
            .collect();
        let Ok(cohort) = CohortData::new(recs) else { continue };
        if cohort.n_events() == 0 {
            continue;
        }
        let scheme = match instances % 3 {
            0 => WeightScheme::PRENTICE,
            1 => WeightScheme::ipw(p),
            _ => WeightScheme::POST_STRAT,
        };
        let Ok(view) = build_weighted_view(&cohort, &scheme) else { continue };
        let dim = view.dim();
        let beta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score = weighted_score(&view, &beta).unwrap();
        let info = weighted_information(&view, &beta).unwrap();
        for k in 0..dim {
            let h = 1e-5;
            let (mut plus, mut minus) = (beta.clone(), beta.clone());
            plus[k] += h;
            minus[k] -= h;
            let fd = (weighted_log_likelihood(&view, &plus).unwrap() - weighted_log_likelihood(&view, &minus).unwrap()) / (2.0 * h);
            worst = worst.max(rel(score[k], fd));
            let (sp, sm) = (weighted_score(&view, &plus).unwrap(), weighted_score(&view, &minus).unwrap());
            for a in 0..dim {
                worst = worst.max(rel(-info[(a, k)], (sp[a] - sm[a]) / (2.0 * h)));
            }
        }
        instances += 1;
    }
    (worst < 1e-5, format!("worst relative error {worst:.2e} over {instances} instances"))
}

/// Z depends on an auxiliary X so the conjugate model carries information.
fn conjugate_problem() -> CohortData {
    let mut rng = stream_rng(SEED, 9);
    let recs = (0..500)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let w: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = 0.8 * x + 0.6 * e;
            let rate = 0.3 * (0.5 * z - 0.3 * w).exp();
            let t = -(1.0 - rng.random::<f64>()).ln() / rate;
            let c = 3.0 * rng.random::<f64>();
            let event = t <= c;
            let sub = rng.random::<f64>() < 0.2;
            SubjectRecord::new(t.min(c), event, (event || sub).then_some(vec![z]), vec![w], vec![x]).with_subcohort(sub)
        })
        .collect();
    CohortData::new(recs).unwrap()
}

fn criterion_9() -> Outcome {
    let cohort = conjugate_problem();
    let ps = fit_scheme(&cohort, &WeightScheme::POST_STRAT).unwrap();
    let cov: Vec<Vec<f64>> = ps.robust_cov.iter().map(|r| r.iter().map(|v| 1.5 * v).collect()).collect();
    let conj = ConjugateModel::fit(&cohort).unwrap();
    let n_iters = 60_000;
    let rho_runs: Vec<(f64, f64)> = [0.0, 0.5, 0.995]
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let c = chain_config(Algorithm::Alg2, n_iters, 5_000, cov.clone(), rho, 1);
            mean_mcse(&kept(&run_alg2(&cohort, &conj, &c, &mut stream_rng(SEED, 90 + i as u64)).unwrap(), 0))
        })
        .collect();
    let boot = BayesianBootstrapModel::from_cohort(&cohort).unwrap();
    let b_runs: Vec<(f64, f64)> = [1usize, 4]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let c = chain_config(Algorithm::Alg1, n_iters, 5_000, cov.clone(), 0.0, b);
            mean_mcse(&kept(&run_alg1(&cohort, &boot, &c, &mut stream_rng(SEED, 95 + i as u64)).unwrap(), 0))
        })
        .collect();
    let agree = |runs: &[(f64, f64)]| {
        let mut worst: f64 = 0.0;
        for (i, a) in runs.iter().enumerate() {
            for b in &runs[i + 1..] {
                worst = worst.max((a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt());
            }
        }
        worst
    };
    let (zr, zb) = (agree(&rho_runs), agree(&b_runs));
    let fmt = |runs: &[(f64, f64)]| runs.iter().map(|(m, s)| format!("{m:.4}+-{s:.4}")).collect::<Vec<_>>().join(", ");
    (
        zr < 3.0 && zb < 3.0,
        format!(
            "rho 0/0.5/0.995: {} (max {zr:.2} SE); B 1/4: {} ({zb:.2} SE)",
            fmt(&rho_runs),
            fmt(&b_runs)
        ),
    )
}

fn criterion_10() -> Outcome {
    let cfg = AnalogueConfig {
        n: 3000,
        seed: SEED,
        ..AnalogueConfig::default()
    };
    let cohort = gen_application_cohort(&cfg, &mut stream_rng(SEED, 0)).unwrap().observed;
    let ps = fit_scheme(&cohort, &WeightScheme::POST_STRAT).unwrap();
    let (n_iters, burn_in) = (320_000, 20_000);
    let config = ChainConfig {
        algorithm: Algorithm::Alg3,
        n_iters,
        burn_in,
        b_copies: 1,
        rho_xi: 0.995,
        rho_z: 0.995,
        proposal_cov: ps.robust_cov.iter().map(|r| r.iter().map(|v| 0.05 * v).collect()).collect(),
        prior: PriorSpec::StudentT {
            df: 3.0,
            center: vec![],
            scale: vec![2.5],
        },
        seed: SEED,
        init_beta: Some(ps.beta_hat.clone()),
    };
    let outs = run_chains(&cohort, ModelKind::Conjugate, &config, 3, workers()).unwrap();
    let rhat: Vec<f64> = (0..cohort.d_beta())
        .map(|k| {
            let chains: Vec<Vec<f64>> = outs.iter().map(|o| o.component(k, burn_in)).collect();
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            gelman_rubin(&refs).unwrap()
        })
        .collect();
    let worst = rhat.iter().copied().fold(0.0, f64::max);
    let acc = mean(&outs.iter().map(|o| o.acceptance_rate).collect::<Vec<_>>());
    (
        worst < 1.01,
        format!(
            "worst R-hat {worst:.4} over {} components, n {} with {} selected, 3 x {} kept, acceptance {acc:.3}",
            rhat.len(),
            cohort.n(),
            cohort.selected().len(),
            n_iters - burn_in
        ),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = run();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {id}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
