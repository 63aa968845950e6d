//! The gather / intervene / re-optimize loop over simulated users, with NDCG
//! trajectories of the logging and trained policies.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clicksim::{simulate_with, BiasParams, InteractionLog};
use crate::dataset::{parse_ranking_corpus, Corpus, FeatureScaler, Partition, Query, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimators::{DeltaKind, ExposureStats, SegmentExposure};
use crate::metrics::ndcg;
use crate::optimizer::{optimize, supervised_bootstrap, OptimizerConfig, SupervisedConfig};
use crate::policy::{MarginalConfig, Policy, RankingDistribution};
use crate::seed::{derive_seed, rng_from};

/// Timesteps at which the logging policy is replaced:
/// `round(t_min * (T / t_min)^(i / (m + 1)))` for `i = 1..=m`, deduplicated, never `T`.
pub fn intervention_schedule(m: usize, total: usize, t_min: usize) -> Vec<usize> {
    if m == 0 || t_min == 0 || t_min >= total {
        return Vec::new();
    }
    let ratio = total as f64 / t_min as f64;
    let mut out: Vec<usize> = Vec::with_capacity(m);
    for i in 1..=m {
        let t = (t_min as f64 * ratio.powf(i as f64 / (m + 1) as f64)).round() as usize;
        if t >= 1 && t < total && out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    out
}

/// `n` timesteps geometrically spaced over `[lo, hi]`, rounded and deduplicated.
pub fn geometric_points(n: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut out = BTreeSet::new();
    if n == 0 || lo == 0 || hi < lo {
        return Vec::new();
    }
    if n == 1 {
        return vec![hi];
    }
    let ratio = hi as f64 / lo as f64;
    for i in 0..n {
        let t = (lo as f64 * ratio.powf(i as f64 / (n - 1) as f64)).round() as usize;
        out.insert(t.clamp(lo, hi));
    }
    out.into_iter().collect()
}

/// Where queries come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n_train: usize,
        #[serde(default)]
        n_validation: usize,
        n_test: usize,
        docs_per_query: usize,
        n_features: usize,
        #[serde(default = "default_label_noise")]
        label_noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// LETOR-format files; features are min-max scaled with statistics of the train file.
    Letor {
        train: PathBuf,
        #[serde(default)]
        validation: Option<PathBuf>,
        test: PathBuf,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_label_noise() -> f64 {
    0.3
}

fn default_true() -> bool {
    true
}

/// Train, validation and test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { n_train, n_validation, n_test, docs_per_query, n_features, label_noise, seed } => {
                let spec = SyntheticSpec {
                    docs_per_query: *docs_per_query,
                    n_features: *n_features,
                    label_noise: *label_noise,
                    seed: *seed,
                };
                let s = spec.generate(*n_train, *n_validation, *n_test)?;
                Ok(Dataset { train: s.train, validation: s.validation, test: s.test })
            }
            DataSource::Letor { train, validation, test, normalize } => {
                let read = |path: &PathBuf, partition| -> Result<Corpus> {
                    let file =
                        File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
                    parse_ranking_corpus(BufReader::new(file), partition)
                };
                let train_c = read(train, Partition::Train)?;
                let validation_c = match validation {
                    Some(p) => read(p, Partition::Validation)?,
                    None => Corpus::new(Vec::new(), Partition::Validation, train_c.feature_dim())?,
                };
                let test_c = read(test, Partition::Test)?;
                let dim = train_c.feature_dim().max(validation_c.feature_dim()).max(test_c.feature_dim());
                let widen = |c: Corpus| -> Result<Corpus> {
                    let partition = c.partition();
                    let queries = c
                        .queries()
                        .iter()
                        .map(|q| Query {
                            id: q.id.clone(),
                            documents: q
                                .documents
                                .iter()
                                .map(|d| {
                                    let mut d = d.clone();
                                    d.features.resize(dim, 0.0);
                                    d
                                })
                                .collect(),
                        })
                        .collect();
                    Corpus::new(queries, partition, dim)
                };
                let (mut tr, mut va, mut te) = (widen(train_c)?, widen(validation_c)?, widen(test_c)?);
                if *normalize {
                    let scaler = FeatureScaler::fit(&tr);
                    tr = scaler.transform(&tr)?;
                    va = scaler.transform(&va)?;
                    te = scaler.transform(&te)?;
                }
                Ok(Dataset { train: tr, validation: va, test: te })
            }
        }
    }
}

/// 200 train and 200 test queries of 20 documents with 16 features.
fn default_data() -> DataSource {
    DataSource::Synthetic {
        n_train: 200,
        n_validation: 0,
        n_test: 200,
        docs_per_query: 20,
        n_features: 16,
        label_noise: default_label_noise(),
        seed: 0,
    }
}

fn default_total_timesteps() -> usize {
    20_000
}

fn default_t_min() -> usize {
    100
}

fn default_n_runs() -> usize {
    20
}

fn default_bootstrap_fraction() -> f64 {
    0.01
}

fn default_n_eval_points() -> usize {
    20
}

fn default_kind() -> DeltaKind {
    DeltaKind::InterventionAware
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default = "BiasParams::top5_trust_bias")]
    pub bias: BiasParams,
    /// Total number of simulated interactions `T`.
    #[serde(default = "default_total_timesteps")]
    pub total_timesteps: usize,
    #[serde(default)]
    pub n_interventions: usize,
    #[serde(default = "default_t_min")]
    pub t_min: usize,
    #[serde(default = "default_kind")]
    pub estimator: DeltaKind,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Production-ranker model and its supervised training; its temperature and
    /// cutoff carry over to every trained policy.
    #[serde(default)]
    pub policy: SupervisedConfig,
    /// Fraction of the train partition used to fit the production ranker.
    #[serde(default = "default_bootstrap_fraction")]
    pub bootstrap_fraction: f64,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    /// Timesteps at which NDCG is recorded; `T` is always recorded.
    #[serde(default)]
    pub eval_points: Option<Vec<usize>>,
    /// Number of geometric eval points over `[t_min, T]` when `eval_points` is unset.
    #[serde(default = "default_n_eval_points")]
    pub n_eval_points: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min >= self.total_timesteps {
            return Err(Error::invalid(format!(
                "t_min must satisfy 1 <= t_min < total_timesteps, got t_min = {} and total_timesteps = {}",
                self.t_min, self.total_timesteps
            )));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs must be positive"));
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::invalid("bootstrap_fraction must lie in (0, 1]"));
        }
        if let Some(points) = &self.eval_points {
            if let Some(&bad) = points.iter().find(|&&t| t == 0 || t > self.total_timesteps) {
                return Err(Error::invalid(format!("eval_points entry {bad} outside [1, total_timesteps]")));
            }
        }
        if self.policy.cutoff == 0 {
            return Err(Error::invalid("policy.cutoff must be positive"));
        }
        if !(self.policy.temperature > 0.0 && self.policy.temperature.is_finite()) {
            return Err(Error::invalid("policy.temperature must be positive"));
        }
        self.optimizer.validate()
    }

    pub fn schedule(&self) -> Vec<usize> {
        intervention_schedule(self.n_interventions, self.total_timesteps, self.t_min)
    }

    /// Sorted, deduplicated eval points, always ending at `T`.
    pub fn resolved_eval_points(&self) -> Vec<usize> {
        let mut points: BTreeSet<usize> = match &self.eval_points {
            Some(p) => p.iter().copied().collect(),
            None => geometric_points(self.n_eval_points, self.t_min, self.total_timesteps).into_iter().collect(),
        };
        points.insert(self.total_timesteps);
        points.into_iter().collect()
    }

    /// Seed of run `run_id`, derived from the master seed.
    pub fn run_seed(&self, run_id: usize) -> u64 {
        derive_seed(self.seed, &[0x72756e, run_id as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub timestep: usize,
    pub ndcg_trained: f64,
    pub ndcg_logging: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub run_id: usize,
    pub seed: u64,
    pub points: Vec<EvalPoint>,
    /// Timesteps at which the logging policy was replaced.
    pub interventions: Vec<usize>,
}

impl RunSeries {
    pub fn final_point(&self) -> Option<&EvalPoint> {
        self.points.last()
    }
}

pub type ResultSeries = Vec<RunSeries>;

/// The logging policy of the current segment with its per-query distributions.
struct Logger {
    policy: Policy,
    dists: Vec<RankingDistribution>,
    exposure: SegmentExposure,
    start: usize,
    ndcg: Option<f64>,
}

impl Logger {
    fn new(policy: Policy, pool: &[Query], bias: &BiasParams, start: usize) -> Result<Logger> {
        let dists = pool.iter().map(|q| policy.distribution(q)).collect::<Result<Vec<_>>>()?;
        let exposure = SegmentExposure::from_distributions(&dists, bias, 0, &MarginalConfig::default());
        Ok(Logger { policy, dists, exposure, start, ndcg: None })
    }
}

/// One run of the loop on a loaded dataset.
pub fn run_single(cfg: &ExperimentConfig, data: &Dataset, run_id: usize) -> Result<RunSeries> {
    cfg.validate()?;
    let seed = cfg.run_seed(run_id);
    let pool_corpus = Corpus::concat(&[&data.train, &data.validation], Partition::Train)?;
    let pool = pool_corpus.queries();
    if pool.is_empty() {
        return Err(Error::invalid("train and validation partitions are empty"));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("train partition is empty"));
    }

    let boot_cfg = SupervisedConfig { seed: derive_seed(seed, &[1]), ..cfg.policy.clone() };
    let pi0 = supervised_bootstrap(cfg.bootstrap_fraction, &data.train, &boot_cfg)?;

    let schedule = cfg.schedule();
    let eval_points = cfg.resolved_eval_points();
    let phi: BTreeSet<usize> = schedule.iter().copied().collect();
    let evals: BTreeSet<usize> = eval_points.iter().copied().collect();
    let events: BTreeSet<usize> = phi.iter().chain(&evals).copied().collect();

    let mut rng = rng_from(seed, &[2]);
    let mut log = InteractionLog::new();
    let mut closed = ExposureStats::new();
    let mut logger = Logger::new(pi0.clone(), pool, &cfg.bias, 0)?;
    let mut series = RunSeries { run_id, seed, points: Vec::with_capacity(evals.len()), interventions: Vec::new() };

    for &t in &events {
        while log.len() < t {
            let q = rng.random_range(0..pool.len());
            let entry = simulate_with(
                &logger.dists[q],
                &pool[q],
                q,
                &cfg.bias,
                log.len() + 1,
                closed.segments().len(),
                &mut rng,
            );
            log.push(entry);
        }
        let mut stats = closed.clone();
        let mut current = logger.exposure.clone();
        current.length = t - logger.start;
        stats.push_segment(current)?;

        let opt_cfg = OptimizerConfig { seed: derive_seed(seed, &[3, t as u64]), ..cfg.optimizer.clone() };
        let trained = optimize(&log, &stats, &cfg.bias, &pi0, pool, cfg.estimator, &opt_cfg)?;
        log::debug!(
            "run {run_id} t={t}: {} epochs, validation estimate {:.5} (initial {:.5})",
            trained.epochs,
            trained.validation_estimate,
            trained.initial_validation_estimate
        );

        if evals.contains(&t) {
            let logging_ndcg = match logger.ndcg {
                Some(v) => v,
                None => {
                    let v = ndcg(&logger.policy, &data.test)?;
                    logger.ndcg = Some(v);
                    v
                }
            };
            series.points.push(EvalPoint {
                timestep: t,
                ndcg_trained: ndcg(&trained.policy, &data.test)?,
                ndcg_logging: logging_ndcg,
            });
        }
        if phi.contains(&t) {
            closed = stats;
            logger = Logger::new(trained.policy, pool, &cfg.bias, t)?;
            series.interventions.push(t);
        }
    }
    if let Some(last) = series.final_point() {
        log::info!("run {run_id} finished: trained NDCG {:.4} at t={}", last.ndcg_trained, last.timestep);
    }
    Ok(series)
}

/// All runs of an experiment, using up to `threads` worker threads. Results
/// do not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ResultSeries> {
    cfg.validate()?;
    let data = cfg.data.load()?;
    run_experiment_on(cfg, &data, threads)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, data: &Dataset, threads: usize) -> Result<ResultSeries> {
    let threads = threads.clamp(1, cfg.n_runs);
    if threads == 1 {
        return (0..cfg.n_runs).map(|r| run_single(cfg, data, r)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<RunSeries>>> = (0..cfg.n_runs).map(|_| None).collect();
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if r >= cfg.n_runs {
                    break;
                }
                let result = run_single(cfg, data, r);
                done.lock().unwrap()[r] = Some(result);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every run is executed")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub timestep: usize,
    pub mean_trained: f64,
    pub lo_trained: f64,
    pub hi_trained: f64,
    pub mean_logging: f64,
    pub lo_logging: f64,
    pub hi_logging: f64,
}

/// Linear-interpolation percentile, `q` in [0, 1], of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per eval point: mean over runs and the two-sided percentile bounds at `confidence`.
pub fn summarize(series: &[RunSeries], confidence: f64) -> Result<Vec<SummaryRow>> {
    if series.len() < 2 {
        return Err(Error::invalid("summarizing needs at least two runs"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("confidence must lie in (0, 1)"));
    }
    let timesteps: Vec<usize> = series[0].points.iter().map(|p| p.timestep).collect();
    if series.iter().any(|s| s.points.iter().map(|p| p.timestep).ne(timesteps.iter().copied())) {
        return Err(Error::invalid("runs were evaluated at different timesteps"));
    }
    let tail = (1.0 - confidence) / 2.0;
    Ok(timesteps
        .iter()
        .enumerate()
        .map(|(i, &timestep)| {
            let trained: Vec<f64> = series.iter().map(|s| s.points[i].ndcg_trained).collect();
            let logging: Vec<f64> = series.iter().map(|s| s.points[i].ndcg_logging).collect();
            SummaryRow {
                timestep,
                mean_trained: mean(&trained),
                lo_trained: percentile(&trained, tail),
                hi_trained: percentile(&trained, 1.0 - tail),
                mean_logging: mean(&logging),
                lo_logging: percentile(&logging, tail),
                hi_logging: percentile(&logging, 1.0 - tail),
            }
        })
        .collect())
}

/// Percentile bootstrap interval of the mean of `values`.
pub fn bootstrap_mean_interval(values: &[f64], confidence: f64, resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng_from(seed, &[0xb5]);
    let n = values.len();
    let means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    let tail = (1.0 - confidence) / 2.0;
    (percentile(&means, tail), percentile(&means, 1.0 - tail))
}

pub const RESULTS_HEADER: &str = "run_id,timestep,ndcg_trained,ndcg_logging";
pub const SUMMARY_HEADER: &str = "timestep,mean_trained,lo_trained,hi_trained,mean_logging,lo_logging,hi_logging";

pub fn results_csv(series: &[RunSeries]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for s in series {
        for p in &s.points {
            writeln!(out, "{},{},{},{}", s.run_id, p.timestep, p.ndcg_trained, p.ndcg_logging).unwrap();
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.timestep, r.mean_trained, r.lo_trained, r.hi_trained, r.mean_logging, r.lo_logging, r.hi_logging
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert!(intervention_schedule(0, 1_000_000, 100).is_empty());
        assert_eq!(intervention_schedule(3, 1_000_000, 100), vec![1000, 10_000, 100_000]);
        assert_eq!(intervention_schedule(1, 1_000_000, 100), vec![10_000]);
        // crowded schedules collapse duplicates and never reach T
        let dense = intervention_schedule(50, 10, 1);
        assert!(dense.windows(2).all(|w| w[0] < w[1]));
        assert!(dense.iter().all(|&t| t < 10));
    }

    #[test]
    fn geometric_points_cover_the_range() {
        let p = geometric_points(20, 100, 20_000);
        assert_eq!(p.first(), Some(&100));
        assert_eq!(p.last(), Some(&20_000));
        assert_eq!(p.len(), 20);
        assert_eq!(geometric_points(5, 3, 3), vec![3]);
    }

    fn series(values: &[(f64, f64)]) -> Vec<RunSeries> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| RunSeries {
                run_id: i,
                seed: 0,
                points: vec![EvalPoint { timestep: 10, ndcg_trained: a, ndcg_logging: b }],
                interventions: vec![],
            })
            .collect()
    }

    #[test]
    fn summary_cases() {
        let rows = summarize(&series(&[(0.0, 0.3), (1.0, 0.3)]), 0.9).unwrap();
        assert_eq!(rows[0].mean_trained, 0.5);
        assert_eq!((rows[0].lo_logging, rows[0].mean_logging, rows[0].hi_logging), (0.3, 0.3, 0.3));
        assert!((rows[0].lo_trained - 0.05).abs() < 1e-15);
        assert!((rows[0].hi_trained - 0.95).abs() < 1e-15);
        assert!(summarize(&series(&[(0.1, 0.1)]), 0.9).is_err());
    }

    #[test]
    fn percentile_bounds_over_twenty_runs() {
        let values: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.0)).collect();
        let rows = summarize(&series(&values), 0.9).unwrap();
        // position 0.05 * 19 = 0.95 and 0.95 * 19 = 18.05
        assert!((rows[0].lo_trained - 0.95).abs() < 1e-12);
        assert!((rows[0].hi_trained - 18.05).abs() < 1e-12);
        assert_eq!(rows[0].mean_trained, 9.5);
    }

    #[test]
    fn csv_headers() {
        let s = series(&[(0.25, 0.5), (0.5, 0.5)]);
        let csv = results_csv(&s);
        assert_eq!(csv, "run_id,timestep,ndcg_trained,ndcg_logging\n0,10,0.25,0.5\n1,10,0.5,0.5\n");
        assert!(summary_csv(&summarize(&s, 0.9).unwrap()).starts_with(SUMMARY_HEADER));
    }

    #[test]
    fn bootstrap_interval_of_constant_values_collapses() {
        let (lo, hi) = bootstrap_mean_interval(&[0.2; 10], 0.9, 500, 1);
        assert!((lo - 0.2).abs() < 1e-15 && (hi - 0.2).abs() < 1e-15);
        let (lo, hi) = bootstrap_mean_interval(&[1.0, 2.0, 3.0, 4.0], 0.9, 2000, 1);
        assert!(lo < 2.5 && hi > 2.5 && lo >= 1.0 && hi <= 4.0);
    }
}
