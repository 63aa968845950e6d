//! Command-line driver: config parsing, experiment dispatch and artifact output.
//!
//! Exit codes are 0 on success, 1 on runtime failures and 2 on usage errors.

pub mod config;
pub mod manifest;
pub mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use thiserror::Error;

use ltr_lab::clicksim::{simulate_with, InteractionLog};
use ltr_lab::dataset::{Corpus, Partition};
use ltr_lab::estimators::{estimate_reward, DeltaKind, ExposureStats, SegmentExposure};
use ltr_lab::experiment::{
    intervention_schedule, results_csv, run_experiment, summarize, summary_csv, DataSource, ExperimentConfig,
};
use ltr_lab::metrics::{ndcg, true_reward};
use ltr_lab::optimizer::{supervised_bootstrap, SupervisedConfig};
use ltr_lab::policy::Policy;
use ltr_lab::seed::{derive_seed, rng_from};

use crate::config::{parse_config, read_config};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::output::{write_atomic, Outputs};

/// Environment variable naming the default output directory of `run`.
pub const OUT_DIR_ENV: &str = "LTR_LAB_OUT";

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Confidence level of the summary bounds.
pub const CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Lab(#[from] ltr_lab::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ltr-lab", version, about = "Counterfactual and online learning-to-rank simulations")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write results.csv, summary.csv and manifest.toml.
    Run(RunArgs),
    /// Log interactions of one policy with simulated users.
    Simulate(SimulateArgs),
    /// Estimated and true reward of a checkpointed policy against a log.
    Evaluate(EvaluateArgs),
    /// Print the intervention timesteps for (m, T, t_min).
    Schedule(ScheduleArgs),
}

/// Settings that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Total timesteps T.
    #[arg(long = "T", value_name = "N")]
    pub total_timesteps: Option<usize>,
    /// Number of interventions m.
    #[arg(long = "m", value_name = "M")]
    pub n_interventions: Option<usize>,
    /// ips, policy_aware, affine, intervention_oblivious or intervention_aware.
    #[arg(long, value_name = "KIND")]
    pub estimator: Option<DeltaKind>,
    /// Directory holding train.txt, test.txt and optionally vali.txt in LETOR format.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of independent runs.
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(t) = self.total_timesteps {
            cfg.total_timesteps = t;
        }
        if let Some(m) = self.n_interventions {
            cfg.n_interventions = m;
        }
        if let Some(k) = self.estimator {
            cfg.estimator = k;
        }
        if let Some(dir) = &self.dataset {
            let vali = dir.join("vali.txt");
            cfg.data = DataSource::Letor {
                train: dir.join("train.txt"),
                validation: vali.exists().then_some(vali),
                test: dir.join("test.txt"),
                normalize: true,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.n_runs = r;
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "FILE", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Replay the run recorded in a manifest.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR", env = OUT_DIR_ENV, default_value = "ltr-lab-out")]
    pub out: PathBuf,
    /// Independent runs executed concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Interaction log to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Logging policy checkpoint; defaults to the supervised production ranker.
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
    /// Also write the logging policy as a checkpoint.
    #[arg(long, value_name = "FILE")]
    pub save_policy: Option<PathBuf>,
    /// Number of interactions; defaults to T.
    #[arg(long, value_name = "N")]
    pub timesteps: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Policy to evaluate.
    #[arg(long, value_name = "FILE")]
    pub policy: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub log: PathBuf,
    /// Logging policy of each segment of the log, in segment order.
    #[arg(long = "logging-policy", value_name = "FILE", required = true)]
    pub logging_policies: Vec<PathBuf>,
    /// Clip correction denominators at 10 / sqrt(|log|).
    #[arg(long)]
    pub clip: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long = "m", value_name = "M")]
    pub m: usize,
    #[arg(long = "T", value_name = "N")]
    pub total: usize,
    #[arg(long = "t-min", value_name = "N", default_value_t = 100)]
    pub t_min: usize,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => run(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Schedule(args) => {
            if args.t_min == 0 || args.t_min >= args.total {
                return Err(CliError::Invalid("need 1 <= t-min < T".into()));
            }
            let phi = intervention_schedule(args.m, args.total, args.t_min);
            println!("{}", phi.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "));
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => read_config(p)?,
        None => parse_config("", None)?,
    };
    overrides.apply(&mut cfg);
    cfg.validate().map_err(|e| CliError::Invalid(format!("invalid config: {e}")))?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = match &args.manifest {
        Some(path) => {
            let mut cfg = RunManifest::read(path)?.config;
            args.overrides.apply(&mut cfg);
            cfg
        }
        None => load_config(args.config.as_deref(), &args.overrides)?,
    };
    cfg.eval_points = Some(cfg.resolved_eval_points());
    cfg.validate().map_err(|e| CliError::Invalid(format!("invalid config: {e}")))?;
    if args.parallel == 0 {
        return Err(CliError::Invalid("--parallel must be at least 1".into()));
    }

    let mut out = Outputs::create(&args.out)?;
    let files: Vec<&str> = if cfg.n_runs >= 2 { vec![RESULTS_FILE, SUMMARY_FILE] } else { vec![RESULTS_FILE] };
    let manifest = RunManifest::new(&cfg, &files);
    let result =
        out.write(MANIFEST_FILE, &manifest.to_toml()?).and_then(|_| run_and_write(&cfg, args.parallel, &mut out));
    match result {
        Ok(()) => {
            println!("wrote {}", out.dir().display());
            Ok(())
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn run_and_write(cfg: &ExperimentConfig, parallel: usize, out: &mut Outputs) -> Result<(), CliError> {
    let series = run_experiment(cfg, parallel)?;
    out.write(RESULTS_FILE, &results_csv(&series))?;
    if series.len() >= 2 {
        let rows = summarize(&series, CONFIDENCE)?;
        out.write(SUMMARY_FILE, &summary_csv(&rows))?;
        if let Some(last) = rows.last() {
            println!(
                "T = {}: trained NDCG {:.4} [{:.4}, {:.4}], logging NDCG {:.4}",
                last.timestep, last.mean_trained, last.lo_trained, last.hi_trained, last.mean_logging
            );
        }
    }
    Ok(())
}

/// Train and validation partitions: the queries users issue.
fn query_pool(cfg: &ExperimentConfig) -> Result<(Corpus, Corpus), CliError> {
    let data = cfg.data.load()?;
    let pool = Corpus::concat(&[&data.train, &data.validation], Partition::Train)?;
    Ok((pool, data.test))
}

fn read_policy(path: &Path) -> Result<Policy, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    Ok(Policy::read_checkpoint(BufReader::new(file))?)
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let data = cfg.data.load()?;
    let pool = Corpus::concat(&[&data.train, &data.validation], Partition::Train)?;
    if pool.is_empty() {
        return Err(CliError::Invalid("the dataset has no train or validation queries".into()));
    }
    let policy = match &args.policy {
        Some(path) => read_policy(path)?,
        None => {
            let boot = SupervisedConfig { seed: derive_seed(cfg.seed, &[1]), ..cfg.policy.clone() };
            supervised_bootstrap(cfg.bootstrap_fraction, &data.train, &boot)?
        }
    };
    let n = args.timesteps.unwrap_or(cfg.total_timesteps);
    let dists = pool.queries().iter().map(|q| policy.distribution(q)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = rng_from(cfg.seed, &[0x51]);
    let mut log = InteractionLog::new();
    for t in 1..=n {
        let q = rng.random_range(0..pool.len());
        log.push(simulate_with(&dists[q], pool.query(q), q, &cfg.bias, t, 0, &mut rng));
    }
    let mut text = Vec::new();
    log.write(&pool, &mut text)?;
    let text = String::from_utf8(text).expect("log text is UTF-8");
    write_atomic(&args.out, &text)?;
    if let Some(path) = &args.save_policy {
        if let Err(e) = write_atomic(path, &policy.to_checkpoint()) {
            let _ = std::fs::remove_file(&args.out);
            return Err(e);
        }
    }
    println!("wrote {} interactions to {}", log.len(), args.out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let (pool, test) = query_pool(&cfg)?;
    let target = read_policy(&args.policy)?;
    let file = File::open(&args.log).map_err(|e| CliError::io(format!("opening {}", args.log.display()), e))?;
    let log = InteractionLog::read(BufReader::new(file), &pool)?;
    if log.is_empty() {
        return Err(CliError::Invalid("the interaction log is empty".into()));
    }

    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &log.entries {
        *lengths.entry(e.segment).or_default() += 1;
    }
    let n_segments = lengths.keys().next_back().map_or(0, |s| s + 1);
    if n_segments != args.logging_policies.len() {
        return Err(CliError::Invalid(format!(
            "the log has {n_segments} segments but {} logging policies were given",
            args.logging_policies.len()
        )));
    }
    let mut stats = ExposureStats::new();
    for (s, path) in args.logging_policies.iter().enumerate() {
        let len = lengths.get(&s).copied().unwrap_or(0);
        if len == 0 {
            return Err(CliError::Invalid(format!("segment {s} has no interactions")));
        }
        let logging = read_policy(path)?;
        stats.push_segment(SegmentExposure::from_policy(&logging, pool.queries(), &cfg.bias, len)?)?;
    }
    let estimated = estimate_reward(&target, pool.queries(), &log, &stats, &cfg.bias, cfg.estimator, args.clip)?;
    println!("estimator {}", cfg.estimator);
    println!("estimated_reward {estimated}");
    println!("true_reward {}", true_reward(&target, &pool)?);
    if !test.is_empty() {
        println!("test_ndcg {}", ndcg(&target, &test)?);
    }
    Ok(())
}
