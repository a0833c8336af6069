//! Subcommands. Each one is a thin adapter over library calls and writes its
//! artifacts plus a `manifest.json` into `--out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cohortbayes_core::baselines::{build_weighted_view, newton_solve, SchemeKind, WeightScheme, DEFAULT_MAX_ITER, DEFAULT_TOL};
use cohortbayes_core::simulation::{gen_application_cohort, gen_cohort, ReplicationTable, Z_975};
use cohortbayes_core::{stream_rng, CohortData, Error};

use crate::alr_io;
use crate::chain_io::write_chain;
use crate::config::{self, AlrConfig, BaselinesConfig, FitConfig, SimulateConfig, StudyConfig};
use crate::csv_io::{read_cohort_path, write_cohort, CovariateNames};
use crate::error::{CliError, CliResult};
use crate::fit::{run_chains, summarize_chains, validate};
use crate::manifest::{ManifestBuilder, VERSION};
use crate::study::run_study_parallel;

#[derive(Debug, Parser)]
#[command(name = "cohortbayes", version = VERSION, about = "Bayesian case-cohort Cox regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicates or chains.
    #[arg(long, env = "COHORTBAYES_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic cohort.
    Simulate(Common),
    /// Sample the posterior of the log-hazard ratio.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Replicate the simulation study.
    Study(Common),
    /// Fit the weighted Cox estimators.
    Baselines(Common),
    /// Additive log-ratio transform of compositional columns.
    Alr {
        #[command(flatten)]
        common: Common,
        /// Map coordinates back to compositions.
        #[arg(long)]
        inverse: bool,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Fit { common, chains } => fit(&common, chains),
        Command::Study(c) => study(&c),
        Command::Baselines(c) => baselines(&c),
        Command::Alr { common, inverse } => alr(&common, inverse),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn out_dir(c: &Common) -> CliResult<&Path> {
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::runtime(format!("{}: {e}", c.out.display())))?;
    Ok(&c.out)
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn simulate(c: &Common) -> CliResult<()> {
    let mut cfg: SimulateConfig = config::load(&c.config)?;
    config::override_seed(cfg.seed_mut(), c.seed);
    let seed = *cfg.seed_mut();
    let mut rng = stream_rng(seed, 0);
    let data = match &cfg {
        SimulateConfig::Weibull(s) => {
            s.validate().map_err(CliError::input)?;
            gen_cohort(s, &mut rng)
        }
        SimulateConfig::Analogue(a) => {
            a.validate().map_err(CliError::input)?;
            gen_application_cohort(a, &mut rng)
        }
    }
    .map_err(CliError::runtime)?;
    let dir = out_dir(c)?;
    let mut manifest = ManifestBuilder::start("simulate", Some(&c.config));
    manifest.seed(seed);
    let path = dir.join("cohort.csv");
    let obs = &data.observed;
    let names = CovariateNames::numbered(obs.d_z(), obs.d_w(), obs.d_x());
    write_cohort(create(&path)?, obs, &names)?;
    manifest.output(&path);
    manifest.finish(dir)?;
    Ok(())
}

fn beta_names(names: &CovariateNames) -> Vec<(String, String)> {
    names.beta().map(|(g, n)| (g.to_string(), n.to_string())).collect()
}

fn warn_no_events(cohort: &CohortData) {
    if cohort.n_events() == 0 {
        eprintln!("warning: the cohort has no events; the partial likelihood is constant");
    }
}

fn fit(c: &Common, chains: usize) -> CliResult<()> {
    let mut cfg: FitConfig = config::load(&c.config)?;
    config::override_seed(&mut cfg.chain.seed, c.seed);
    if chains == 0 {
        return Err(CliError::input("--chains must be at least 1"));
    }
    let data_path = config::resolve(&c.config, &cfg.data);
    let file = read_cohort_path(&data_path)?;
    validate(&file.cohort, cfg.model, &cfg.chain).map_err(CliError::input)?;
    warn_no_events(&file.cohort);
    let outputs = run_chains(&file.cohort, cfg.model, &cfg.chain, chains, c.workers).map_err(CliError::runtime)?;
    if let Some(bad) = outputs.iter().position(|o| o.log_h.iter().any(|v| !v.is_finite())) {
        return Err(CliError::runtime(format!("chain {bad} produced a non-finite log h")));
    }

    let dir = out_dir(c)?;
    let mut manifest = ManifestBuilder::start("fit", Some(&c.config));
    manifest.seed(cfg.chain.seed);
    manifest.input(&data_path);
    let names = beta_names(&file.names);
    let labels: Vec<String> = names.iter().map(|(_, n)| n.clone()).collect();
    for (k, o) in outputs.iter().enumerate() {
        let path = dir.join(format!("chain_{k}.jsonl"));
        write_chain(create(&path)?, k, &labels, o)?;
        manifest.output(&path);
    }
    let summary = summarize_chains(&outputs, cfg.chain.burn_in, &names, cfg.split_rhat).map_err(CliError::runtime)?;
    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["group", "component", "hr_mean", "hr_lo", "hr_hi", "p_le_1"]).map_err(CliError::runtime)?;
    for s in &summary {
        let p = &s.summary;
        w.write_record([
            s.group.clone(),
            s.component.clone(),
            p.hr_mean.to_string(),
            p.hr_ci_low.to_string(),
            p.hr_ci_high.to_string(),
            p.p_hr_le_1.to_string(),
        ])
        .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    manifest.output(&path);

    let path = dir.join("diagnostics.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["group", "component", "rhat", "rhat_split", "ess", "acceptance_rate"]).map_err(CliError::runtime)?;
    let mean_acc = outputs.iter().map(|o| o.acceptance_rate).sum::<f64>() / outputs.len() as f64;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &summary {
        w.write_record([s.group.clone(), s.component.clone(), opt(s.rhat), opt(s.rhat_split), opt(s.ess), mean_acc.to_string()])
            .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    manifest.output(&path);
    manifest.finish(dir)?;
    Ok(())
}

/// Writes the table as CSV with columns
/// `estimator,bias,esd,rmse,re,coverage,replicates`.
pub fn write_table_csv<W: Write>(writer: W, table: &ReplicationTable) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "bias", "esd", "rmse", "re", "coverage", "replicates"]).map_err(CliError::runtime)?;
    for r in &table.rows {
        w.write_record([
            r.estimator.clone(),
            r.bias.to_string(),
            r.esd.to_string(),
            r.rmse.to_string(),
            r.re.to_string(),
            r.coverage.to_string(),
            r.replicates.to_string(),
        ])
        .map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)
}

fn study(c: &Common) -> CliResult<()> {
    let mut cfg: StudyConfig = config::load(&c.config)?;
    config::override_seed(&mut cfg.sim.seed, c.seed);
    cfg.sim.validate().map_err(CliError::input)?;
    if cfg.estimators.is_empty() {
        return Err(CliError::input("no estimators requested"));
    }
    let table = run_study_parallel(&cfg.sim, &cfg.estimators, &cfg.chain, c.workers).map_err(CliError::runtime)?;
    if table.replicates_failed > 0 {
        eprintln!(
            "warning: {} of {} replicates failed and were excluded",
            table.replicates_failed, table.replicates_requested
        );
    }
    let dir = out_dir(c)?;
    let mut manifest = ManifestBuilder::start("study", Some(&c.config));
    manifest.seed(cfg.sim.seed);
    let path = dir.join("table.csv");
    write_table_csv(create(&path)?, &table)?;
    manifest.output(&path);
    let path = dir.join("table.json");
    let json = serde_json::to_string_pretty(&table).map_err(CliError::runtime)?;
    std::fs::write(&path, json + "\n").map_err(CliError::runtime)?;
    manifest.output(&path);
    manifest.finish(dir)?;
    Ok(())
}

fn scheme_name(kind: SchemeKind) -> &'static str {
    match kind {
        SchemeKind::Full => "full",
        SchemeKind::Prentice => "prentice",
        SchemeKind::Ipw => "ipw",
        SchemeKind::PostStrat => "post_strat",
    }
}

fn default_schemes(cohort: &CohortData, sampling_prob: Option<f64>) -> Vec<WeightScheme> {
    let mut v = Vec::new();
    if cohort.unselected().is_empty() {
        v.push(WeightScheme::FULL);
    } else {
        eprintln!("warning: some expensive covariates are missing; skipping the full-cohort fit");
    }
    v.push(WeightScheme::PRENTICE);
    match sampling_prob {
        Some(p) => v.push(WeightScheme::ipw(p)),
        None => eprintln!("warning: no sampling_prob given; skipping ipw"),
    }
    v.push(WeightScheme::POST_STRAT);
    v
}

fn baselines(c: &Common) -> CliResult<()> {
    let cfg: BaselinesConfig = config::load(&c.config)?;
    let data_path = config::resolve(&c.config, &cfg.data);
    let file = read_cohort_path(&data_path)?;
    let cohort = &file.cohort;
    let schemes = match &cfg.schemes {
        Some(s) => s.clone(),
        None => default_schemes(cohort, cfg.sampling_prob),
    };
    for s in &schemes {
        s.validate().map_err(CliError::input)?;
    }
    warn_no_events(cohort);
    let names = beta_names(&file.names);
    let dir = out_dir(c)?;
    let mut manifest = ManifestBuilder::start("baselines", Some(&c.config));
    manifest.input(&data_path);
    let path = dir.join("estimates.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "scheme", "group", "component", "estimate", "robust_se", "lo", "hi", "converged", "iterations",
    ])
    .map_err(CliError::runtime)?;
    for s in &schemes {
        let view = build_weighted_view(cohort, s).map_err(|e| match e {
            Error::MissingCovariates(_) | Error::InvalidValue { .. } => CliError::input(e),
            other => CliError::runtime(other),
        })?;
        let fit = newton_solve(&view, &vec![0.0; view.dim()], DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(CliError::runtime)?;
        if !fit.converged {
            eprintln!("warning: {} did not converge", scheme_name(s.kind));
        }
        for (k, (group, comp)) in names.iter().enumerate() {
            let (lo, hi) = fit.wald_interval(k, Z_975);
            w.write_record([
                scheme_name(s.kind).to_string(),
                group.clone(),
                comp.clone(),
                fit.beta_hat[k].to_string(),
                fit.robust_se[k].to_string(),
                lo.to_string(),
                hi.to_string(),
                fit.converged.to_string(),
                fit.iterations.to_string(),
            ])
            .map_err(CliError::runtime)?;
        }
    }
    w.flush().map_err(CliError::runtime)?;
    manifest.output(&path);
    manifest.finish(dir)?;
    Ok(())
}

fn alr(c: &Common, inverse: bool) -> CliResult<()> {
    let cfg: AlrConfig = config::load(&c.config)?;
    if !(cfg.detection_half > 0.0) {
        return Err(CliError::input("detection_half must be positive"));
    }
    let input = config::resolve(&c.config, &cfg.input);
    let table = alr_io::read_table(File::open(&input).map_err(|e| CliError::input(format!("{}: {e}", input.display())))?)?;
    let dir = out_dir(c)?;
    let mut manifest = ManifestBuilder::start(if inverse { "alr --inverse" } else { "alr" }, Some(&c.config));
    manifest.input(&input);
    if inverse {
        let sd = match &cfg.sd_file {
            Some(p) => {
                let p = config::resolve(&c.config, p);
                manifest.input(&p);
                alr_io::read_sd(File::open(&p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?, &cfg.components)?
            }
            None => vec![1.0; cfg.components.len()],
        };
        let out = alr_io::inverse(&table, &cfg.components, &sd, cfg.percent)?;
        let path = dir.join("composition.csv");
        alr_io::write_table(create(&path)?, &out)?;
        manifest.output(&path);
    } else {
        let opts = alr_io::ForwardOptions {
            components: &cfg.components,
            percent: cfg.percent,
            detection_half: cfg.detection_half,
            reference_column: cfg.reference_column.as_deref(),
        };
        let (out, sd) = alr_io::forward(&table, &opts)?;
        let path = dir.join("alr.csv");
        alr_io::write_table(create(&path)?, &out)?;
        manifest.output(&path);
        let path = dir.join("alr_sd.csv");
        alr_io::write_sd(create(&path)?, &cfg.components, &sd)?;
        manifest.output(&path);
    }
    manifest.finish(dir)?;
    Ok(())
}
