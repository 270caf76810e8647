use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use incomplete_ustat::conditions::ConditionId;
use incomplete_ustat::harness::{
    emit_report, experiment, run_clt_experiment, run_condition_sweep, run_counterexample, run_moments,
    run_oracle, Dilution, DistributionConfig, ExperimentConfig, OutputFormat, Report, ReportHeader,
    Standardization, TargetLaw,
};
use incomplete_ustat::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ustat", version, about = "Simulation and verification toolkit for incomplete U-statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Standardized replicate statistics at each grid point.
    Simulate,
    /// beta^2, gamma^2, theta^2 and Var U at each grid point.
    Moments,
    /// Sweep the sufficient conditions over the n grid.
    Conditions,
    /// Kolmogorov-Smirnov test of the standardized statistic.
    CltTest,
    /// n U for the undiluted product kernel against both limit laws.
    Counterexample,
    /// Exhaustive enumeration check of the variance identities.
    Oracle,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Symmetric kernel table `x, y, h` for discrete rows.
    #[arg(long, global = true)]
    kernel_table: Option<PathBuf>,
    /// Row law: rademacher, uniform, standard_normal.
    #[arg(long, global = true)]
    dist: Option<String>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    dist_params: Option<Vec<f64>>,
    /// Discrete row law from a `value, probability` file.
    #[arg(long, global = true)]
    dist_file: Option<PathBuf>,
    /// Comma-separated n grid.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    n: Option<Vec<usize>>,
    /// Fixed retention probability.
    #[arg(long, global = true, conflicts_with = "exponent")]
    p: Option<f64>,
    /// p = n^(-exponent).
    #[arg(long, global = true)]
    exponent: Option<f64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    #[arg(long, global = true, value_enum)]
    standardization: Option<Standardization>,
    #[arg(long, global = true, value_enum)]
    target: Option<TargetLaw>,
    #[arg(long, global = true)]
    ks_threshold: Option<f64>,
    /// Maximum expected kernel evaluations per batch.
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Comma-separated condition ids, e.g. C1,C4',ETA2.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    ids: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    eps: Option<Vec<f64>>,
    /// Monte Carlo replicates per condition estimate.
    #[arg(long, global = true)]
    m: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output.path = Some(v.clone());
        }
        if let Some(v) = self.format {
            cfg.output.format = v;
        }
        if let Some(v) = &self.kernel {
            cfg.kernel = v.clone();
            cfg.kernel_table = None;
        }
        if let Some(v) = &self.kernel_table {
            cfg.kernel_table = Some(v.clone());
        }
        if let Some(v) = &self.dist {
            cfg.distribution = DistributionConfig::named(v);
        }
        if let Some(v) = &self.dist_params {
            cfg.distribution.params = v.clone();
        }
        if let Some(v) = &self.dist_file {
            cfg.distribution = DistributionConfig::named("discrete");
            cfg.distribution.file = Some(v.clone());
        }
        if let Some(v) = &self.n {
            cfg.n_grid = v.clone();
        }
        if let Some(p) = self.p {
            cfg.dilution = Dilution::Fixed { p };
        }
        if let Some(exponent) = self.exponent {
            cfg.dilution = Dilution::Exponent { exponent };
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = self.standardization {
            cfg.standardization = v;
        }
        if let Some(v) = self.target {
            cfg.target = v;
        }
        if let Some(v) = self.ks_threshold {
            cfg.ks_threshold = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(ids) = &self.ids {
            cfg.conditions.ids = ids.iter().map(|s| s.parse()).collect::<Result<Vec<ConditionId>>>()?;
        }
        if let Some(v) = &self.eps {
            cfg.conditions.eps_grid = v.clone();
        }
        if let Some(v) = self.m {
            cfg.conditions.m = v;
        }
        Ok(cfg)
    }
}

/// Exit status of a run that completed without error.
enum Outcome {
    Pass,
    StatFail,
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = cli.common.load()?;
    cfg.validate()?;
    let header = ReportHeader {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
    };
    let path = cfg.output.path.as_deref();
    let format = cfg.output.format;
    match cli.command {
        Command::Simulate => {
            let samples = cfg
                .n_grid
                .iter()
                .map(|&n| experiment::replicate_standardized(&cfg, n))
                .collect::<Result<Vec<_>>>()?;
            emit_report(Report::Samples(&samples), format, path, &header)?;
            Ok(Outcome::Pass)
        }
        Command::Moments => {
            let m = run_moments(&cfg)?;
            emit_report(Report::Moments(&m), format, path, &header)?;
            Ok(Outcome::Pass)
        }
        Command::Conditions => {
            let sweep = run_condition_sweep(&cfg)?;
            emit_report(Report::Conditions(&sweep.reports), format, path, &header)?;
            for m in &sweep.mismatches {
                log::error!("verdict mismatch: {m}");
            }
            Ok(if sweep.mismatches.is_empty() {
                Outcome::Pass
            } else {
                Outcome::StatFail
            })
        }
        Command::CltTest => {
            let results = run_clt_experiment(&cfg)?;
            emit_report(Report::DistTests(&results), format, path, &header)?;
            Ok(if results.iter().all(|r| r.pass) {
                Outcome::Pass
            } else {
                Outcome::StatFail
            })
        }
        Command::Counterexample => {
            let mut results = Vec::new();
            let mut ok = true;
            for &n in &cfg.n_grid {
                let (normal, shifted) = run_counterexample(&cfg, n)?;
                ok &= !normal.pass && shifted.pass;
                results.push(normal);
                results.push(shifted);
            }
            emit_report(Report::DistTests(&results), format, path, &header)?;
            Ok(if ok { Outcome::Pass } else { Outcome::StatFail })
        }
        Command::Oracle => {
            let n = cfg.n_grid[0];
            let summary = run_oracle(&cfg.kernel_spec()?, &cfg.distribution_spec()?, n, cfg.dilution.p_at(n)?)?;
            emit_report(Report::Oracle(&summary), format, path, &header)?;
            Ok(if summary.max_abs_error() < 1e-10 {
                Outcome::Pass
            } else {
                Outcome::StatFail
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::StatFail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
