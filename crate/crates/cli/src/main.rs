use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_mc::analysis::{
    ee_limit_clt_variance, ee_second_moment_simulation, gaussian_moment_estimands, mse_harness, Estimand,
    HarnessOptions, MseTable, TwoLevelInstance,
};
use adaptive_mc::io::{self, CsvState};
use adaptive_mc::kernels::LocalKernel;
use adaptive_mc::{BuiltSampler, EnergyTarget, RunConfig, Sampler, SamplerKind};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "adaptive-mc", version, about = "Equi-energy and importance-resampling samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and report theta lower bounds.
    Validate { config: PathBuf },
    /// Run one sampler and write its trajectory.
    Run {
        #[command(flatten)]
        common: Common,
        /// Sampler kind; defaults to the config's `kernel`.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<SamplerKind>,
    },
    /// Replicate every configured sampler and tabulate MSEs and ratios.
    Table1 {
        #[command(flatten)]
        common: Common,
    },
    /// Exact asymptotic variances on a two-level finite instance.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_kind(s: &str) -> Result<SamplerKind, String> {
    SamplerKind::parse(s).ok_or_else(|| format!("unknown sampler kind {s:?} (rwm|ee|ir|ee_limit|ir_limit)"))
}

struct Job {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
    jobs: Option<usize>,
    digest: String,
}

impl Job {
    fn load(common: &Common) -> Result<Self> {
        let mut config = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let report = config.validate();
        if !report.is_valid() {
            bail!("invalid configuration {}:\n{report}", common.config.display());
        }
        let out = common.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("output"));
        Ok(Self { seed: config.seed, digest: config.digest(), config, out, jobs: common.jobs })
    }

    fn metadata(&self, command: &str, extra: &[(&str, String)]) -> Vec<(String, String)> {
        let mut m = vec![
            ("command".to_string(), command.to_string()),
            ("config_digest".into(), self.digest.clone()),
            ("seed".into(), self.seed.to_string()),
            ("version".into(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        m.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        m
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out) = match &cli.command {
        Command::Validate { config } => (validate(config), None),
        Command::Run { common, kind } => with_job(common, |job| run(job, *kind)),
        Command::Table1 { common } => with_job(common, table1),
        Command::Oracle { common } => with_job(common, oracle),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(dir) = out {
                if let Err(m) = io::mark_failed(&dir, &format!("{e:#}")) {
                    eprintln!("error: could not write failure sentinel: {m}");
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn with_job(common: &Common, body: impl FnOnce(&Job) -> Result<()>) -> (Result<bool>, Option<PathBuf>) {
    match Job::load(common) {
        Ok(job) => {
            let out = job.out.clone();
            (body(&job).map(|_| true), Some(out))
        }
        Err(e) => (Err(e), None),
    }
}

fn validate(path: &Path) -> Result<bool> {
    let config = RunConfig::load(path)?;
    let report = config.validate();
    println!("{report}");
    Ok(report.is_valid())
}

fn run(job: &Job, kind: Option<SamplerKind>) -> Result<()> {
    let kind = kind.or(job.config.kernel).context("no sampler kind: pass --kind or set `kernel`")?;
    let n = job.config.iterations;
    let written = match job.config.build()? {
        BuiltSampler::Gaussian(s) => write_run(job, &s, kind, n)?,
        BuiltSampler::Finite(s) => write_run(job, &s, kind, n)?,
    };
    println!("wrote {}", written.display());
    Ok(())
}

fn write_run<T, L>(job: &Job, sampler: &Sampler<T, L>, kind: SamplerKind, n: usize) -> Result<PathBuf>
where
    T: EnergyTarget,
    T::State: CsvState,
    L: LocalKernel<T>,
{
    let traj = sampler.run(kind, n, job.seed)?;
    let path = job.out.join(format!("trajectory_{}.csv", kind.as_str()));
    io::write_trajectory_csv(&path, &traj, &job.digest)?;
    let rates: Vec<String> = traj.levels.iter().map(|l| format!("{:.4}", l.acceptance_rate())).collect();
    let meta = job.metadata(
        "run",
        &[
            ("kind", kind.as_str().into()),
            ("iterations", n.to_string()),
            ("levels", traj.levels.len().to_string()),
            ("acceptance_rates", rates.join(",")),
        ],
    );
    io::write_metadata(&path.with_extension("meta"), &meta)?;
    Ok(path)
}

fn table1(job: &Job) -> Result<()> {
    let cfg = &job.config;
    let options = HarnessOptions {
        replications: cfg.replications,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        seed: job.seed,
        jobs: job.jobs,
    };
    let kinds = cfg.table_kinds();
    let table = match cfg.build()? {
        BuiltSampler::Gaussian(s) => {
            let c = s.target.covariance();
            let variances: Vec<f64> = (0..c.nrows()).map(|i| c[(i, i)]).collect();
            mse_harness(&s, &kinds, &gaussian_moment_estimands(&variances), options)?
        }
        BuiltSampler::Finite(s) => {
            let pi = s.target.tempered_probabilities(1.0);
            let estimands: Vec<Estimand<usize>> = pi
                .iter()
                .enumerate()
                .map(|(x, &p)| Estimand::new(format!("P(X={x})"), p, move |s: &usize| (*s == x) as u8 as f64))
                .collect();
            mse_harness(&s, &kinds, &estimands, options)?
        }
    };
    write_table(job, &table)
}

fn write_table(job: &Job, table: &MseTable) -> Result<()> {
    let csv = job.out.join("mse.csv");
    io::write_mse_csv(&csv, table, &job.digest)?;
    let text = io::format_mse_table(table);
    std::fs::write(job.out.join("mse.txt"), &text)?;
    let meta = job.metadata(
        "table1",
        &[
            ("replications", table.options.replications.to_string()),
            ("iterations", table.options.iterations.to_string()),
            ("burn_in", table.options.burn_in.to_string()),
            ("ratios_reliable", table.reliable().to_string()),
        ],
    );
    io::write_metadata(&job.out.join("mse.meta"), &meta)?;
    print!("{text}");
    Ok(())
}

fn oracle(job: &Job) -> Result<()> {
    let cfg = &job.config;
    let sampler = match cfg.build()? {
        BuiltSampler::Finite(s) => s,
        BuiltSampler::Gaussian(_) => bail!("the oracle needs a finite target"),
    };
    let target = &sampler.target;
    let proposal = cfg.proposal(target.state_count())?;
    let instance = TwoLevelInstance::from_target(target, &sampler.ladder, &proposal)?;
    let f = DVector::from_vec(cfg.oracle_function.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; target.state_count()];
        v[0] = 1.0;
        v
    }));
    let report = ee_limit_clt_variance(&instance, &f)?;
    let check = if cfg.cross_check {
        let center = instance.base1.mean(&f);
        let fv = f.clone();
        Some(ee_second_moment_simulation(
            &sampler,
            move |x: &usize| fv[*x],
            center,
            cfg.oracle_replications,
            cfg.oracle_steps,
            job.seed,
            job.jobs,
        )?)
    } else {
        None
    };
    let path = job.out.join("variance_report.txt");
    io::write_variance_report(&path, &report, check.as_ref(), &job.digest)?;
    io::write_metadata(&job.out.join("variance_report.meta"), &job.metadata("oracle", &[]))?;
    print!("{}", io::format_variance_report(&report, check.as_ref()));
    if let (Some(c), Some(limit)) = (&check, report.second_moment_limit) {
        println!("cross_check_z = {:.3}", (c.variance - limit) / c.standard_error);
    }
    Ok(())
}
