//! Policy optimization from logged clicks: Monte-Carlo policy gradients on
//! the clipped training estimate, early stopping on the unclipped validation
//! estimate, and the supervised bootstrap that produces the initial ranker.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clicksim::{relevance_probability, BiasParams, InteractionLog};
use crate::dataset::{Corpus, Query};
use crate::error::{Error, Result};
use crate::estimators::{click_weights, clip_floor, estimate_from_weights, ClickWeights, DeltaKind, ExposureStats};
use crate::metrics::dcg_discount;
use crate::policy::{ModelKind, Policy, ScoringModel, DEFAULT_HIDDEN};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub n_epochs_max: usize,
    /// Rankings sampled per query per step.
    pub gradient_samples: usize,
    /// Queries per step.
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1.0,
            n_epochs_max: 50,
            gradient_samples: 8,
            batch_size: 32,
            validation_fraction: 0.15,
            patience: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("optimizer.learning_rate must be positive"));
        }
        if self.n_epochs_max == 0 || self.gradient_samples == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "optimizer.n_epochs_max, gradient_samples, batch_size and patience must be positive",
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("optimizer.validation_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Splits a log into (train, validation) at the timestep level. Entry order
/// and segment ids are kept in both parts.
pub fn split_clicks(log: &InteractionLog, fraction: f64, seed: u64) -> Result<(InteractionLog, InteractionLog)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let n = log.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split a log of {n} entries")));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = rng_from(seed, &[0x5b1]);
    let mut is_val = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_val) {
        is_val[i] = true;
    }
    let (mut train, mut val) = (InteractionLog::new(), InteractionLog::new());
    for (entry, v) in log.entries.iter().zip(is_val) {
        if v {
            val.push(entry.clone());
        } else {
            train.push(entry.clone());
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean {
    count: u64,
    mean: f64,
}

impl RunningMean {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// `sum_d w_d * discount(rank of d in ranking)`; documents past the ranking contribute 0.
pub fn ranking_return(weights: &[f64], ranking: &[usize]) -> f64 {
    ranking.iter().enumerate().map(|(i, &d)| weights[d] * dcg_discount(i + 1)).sum()
}

/// Score-function estimate of the gradient of `sum_d E_y[discount(rank_y(d))] * w_d`.
///
/// Each sampled ranking contributes `(return - b) * grad log pi(y | q) / n_samples`,
/// where `b` is the running mean of earlier returns; `baseline` is updated in place.
pub fn policy_gradient_estimate<R: Rng + ?Sized>(
    policy: &Policy,
    weights: &[f64],
    query: &Query,
    n_samples: usize,
    baseline: &mut RunningMean,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.model.params().len()];
    add_policy_gradient(policy, weights, query, n_samples, 1.0, baseline, rng, &mut grad)?;
    Ok(grad)
}

/// One ranking's term of the score-function estimator:
/// `(ranking_return(weights, ranking) - baseline) * grad log pi(ranking | q)`.
pub fn score_function_term(
    policy: &Policy,
    weights: &[f64],
    query: &Query,
    ranking: &[usize],
    baseline: f64,
) -> Result<Vec<f64>> {
    if weights.len() != query.len() {
        return Err(Error::DimensionMismatch { expected: query.len(), actual: weights.len() });
    }
    let mut grad = policy.log_prob_gradient(query, ranking)?;
    let advantage = ranking_return(weights, ranking) - baseline;
    grad.iter_mut().for_each(|g| *g *= advantage);
    Ok(grad)
}

#[allow(clippy::too_many_arguments)]
fn add_policy_gradient<R: Rng + ?Sized>(
    policy: &Policy,
    weights: &[f64],
    query: &Query,
    n_samples: usize,
    scale: f64,
    baseline: &mut RunningMean,
    rng: &mut R,
    grad: &mut [f64],
) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::invalid("gradient_samples must be at least 1"));
    }
    if weights.len() != query.len() {
        return Err(Error::DimensionMismatch { expected: query.len(), actual: weights.len() });
    }
    if weights.iter().all(|&w| w == 0.0) || query.len() < 2 {
        return Ok(());
    }
    let fwd = policy.model.forward(query)?;
    let dist = crate::policy::RankingDistribution::from_scores(&fwd.scores, policy.temperature)?;
    let mut score_grad = vec![0.0; query.len()];
    for _ in 0..n_samples {
        let y = dist.sample(policy.cutoff, rng);
        let r = ranking_return(weights, &y);
        let advantage = r - baseline.mean();
        baseline.update(r);
        dist.add_log_prob_score_gradient(&y, scale * advantage / n_samples as f64, &mut score_grad);
    }
    policy.model.backward(query, &fwd, &score_grad, grad);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub policy: Policy,
    /// Unclipped validation estimate of the returned policy.
    pub validation_estimate: f64,
    /// Unclipped validation estimate of the initial policy.
    pub initial_validation_estimate: f64,
    pub epochs: usize,
}

/// Stochastic gradient ascent on the clipped training estimate, starting
/// from `init`, returning the parameters of the best validation epoch.
/// `queries` must be the query set the log and exposure statistics index.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    log: &InteractionLog,
    stats: &ExposureStats,
    bias: &BiasParams,
    init: &Policy,
    queries: &[Query],
    kind: DeltaKind,
    cfg: &OptimizerConfig,
) -> Result<Optimized> {
    cfg.validate()?;
    if log.is_empty() {
        return Err(Error::invalid("cannot optimize on an empty log"));
    }
    if stats.total_timesteps() != log.len() {
        return Err(Error::invalid(format!(
            "exposure statistics cover {} timesteps but the log has {}",
            stats.total_timesteps(),
            log.len()
        )));
    }
    let (train, validation) = split_clicks(log, cfg.validation_fraction, cfg.seed)?;
    let train_w = click_weights(&train, stats, bias, kind, Some(clip_floor(stats.total_timesteps())))?;
    let val_w = click_weights(&validation, stats, bias, kind, None)?;

    let initial = estimate_from_weights(init, queries, &val_w)?;
    let mut best = Optimized {
        policy: init.clone(),
        validation_estimate: initial,
        initial_validation_estimate: initial,
        epochs: 0,
    };
    let mut active: Vec<usize> = (0..queries.len()).filter(|&q| train_w.has_signal(q)).collect();
    if active.is_empty() {
        return Ok(best);
    }

    let mut rng = rng_from(cfg.seed, &[0x0b7]);
    let mut policy = init.clone();
    let mut baselines = vec![RunningMean::default(); queries.len()];
    let mut stale = 0;
    for epoch in 1..=cfg.n_epochs_max {
        active.shuffle(&mut rng);
        for batch in active.chunks(cfg.batch_size) {
            let step = batch_gradient(&policy, &train_w, queries, batch, active.len(), cfg, &mut baselines, &mut rng)?;
            for (p, g) in policy.model.params_mut().iter_mut().zip(&step) {
                *p += cfg.learning_rate * g;
            }
        }
        best.epochs = epoch;
        let value = estimate_from_weights(&policy, queries, &val_w)?;
        if value > best.validation_estimate {
            best.validation_estimate = value;
            best.policy = policy.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Unbiased estimate of the full-objective gradient from one batch of queries.
#[allow(clippy::too_many_arguments)]
fn batch_gradient<R: Rng + ?Sized>(
    policy: &Policy,
    weights: &ClickWeights,
    queries: &[Query],
    batch: &[usize],
    n_active: usize,
    cfg: &OptimizerConfig,
    baselines: &mut [RunningMean],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let scale = n_active as f64 / batch.len() as f64;
    let mut grad = vec![0.0; policy.model.params().len()];
    for &q in batch {
        add_policy_gradient(
            policy,
            weights.query(q),
            &queries[q],
            cfg.gradient_samples,
            scale,
            &mut baselines[q],
            rng,
            &mut grad,
        )?;
    }
    Ok(grad)
}

/// Settings of the supervised bootstrap producing the production ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub temperature: f64,
    pub cutoff: usize,
    pub learning_rate: f64,
    /// Number of single-query SGD updates.
    pub steps: usize,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            model: ModelKind::Mlp,
            hidden: DEFAULT_HIDDEN,
            temperature: 1.0,
            cutoff: 5,
            learning_rate: 0.1,
            steps: 10_000,
            seed: 0,
        }
    }
}

/// Fits a scoring model to `0.25 * label` by SGD on the query-centered squared
/// error, using `ceil(fraction * |corpus|)` queries sampled without replacement.
/// Each step draws one of those queries uniformly.
pub fn supervised_bootstrap(fraction: f64, corpus: &Corpus, cfg: &SupervisedConfig) -> Result<Policy> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("bootstrap fraction {fraction} outside (0, 1]")));
    }
    let n = ((fraction * corpus.len() as f64).ceil() as usize).min(corpus.len());
    if n == 0 {
        return Err(Error::invalid("bootstrap sample is empty"));
    }
    let mut rng = rng_from(cfg.seed, &[0xb007]);
    let mut sample: Vec<usize> = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
    sample.sort_unstable();
    let mut model = ScoringModel::init(cfg.model, corpus.feature_dim(), cfg.hidden, &mut rng)?;
    let mut grad = vec![0.0; model.params().len()];
    for _ in 0..cfg.steps {
        let q = corpus.query(sample[rng.random_range(0..sample.len())]);
        let fwd = model.forward(q)?;
        // Residuals are centered within the query: a shared offset does not
        // change the ranking, and the linear scorer has no intercept.
        let residual: Vec<f64> = fwd.scores.iter().zip(q.labels()).map(|(s, l)| s - relevance_probability(l)).collect();
        let mean = residual.iter().sum::<f64>() / residual.len() as f64;
        let scale = 2.0 / q.len() as f64;
        let upstream: Vec<f64> = residual.iter().map(|r| scale * (r - mean)).collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        model.backward(q, &fwd, &upstream, &mut grad);
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
    }
    Policy::new(model, cfg.temperature, cfg.cutoff)
}
