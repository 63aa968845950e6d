//! Click-debiasing corrections and the estimated reward.
//!
//! Every estimator turns the click on document `d` at timestep `t` into a
//! relevance signal `Delta(d | t)`; the estimated reward of a policy `pi` is
//!
//! ```text
//! R_hat(pi) = 1/T * sum_t sum_{d in D_{q_t}} lambda(d | pi, q_t) * Delta(d | t)
//! ```
//!
//! The intervention-aware correction divides by exposure expectations taken
//! over *all* logging policies that gathered the data, weighted by how long
//! each was deployed, so its per-click weights change retroactively as the
//! logging policy is replaced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clicksim::{BiasParams, InteractionLog};
use crate::dataset::Query;
use crate::error::{Error, Result};
use crate::metrics::lambda_from_marginals;
use crate::policy::{MarginalConfig, Policy, RankingDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    Ips,
    PolicyAware,
    Affine,
    InterventionOblivious,
    InterventionAware,
}

impl DeltaKind {
    pub const ALL: [DeltaKind; 5] = [
        DeltaKind::Ips,
        DeltaKind::PolicyAware,
        DeltaKind::Affine,
        DeltaKind::InterventionOblivious,
        DeltaKind::InterventionAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeltaKind::Ips => "ips",
            DeltaKind::PolicyAware => "policy_aware",
            DeltaKind::Affine => "affine",
            DeltaKind::InterventionOblivious => "intervention_oblivious",
            DeltaKind::InterventionAware => "intervention_aware",
        }
    }
}

impl fmt::Display for DeltaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeltaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DeltaKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown estimator {s:?}")))
    }
}

/// Lower bound applied to correction denominators: `10 / sqrt(n)`.
pub fn clip_floor(n_interactions: usize) -> f64 {
    10.0 / (n_interactions as f64).sqrt()
}

/// `(numerator) / max(denominator, floor)`. A zero denominator is only
/// acceptable when there is no signal to correct.
fn corrected(numerator: f64, denominator: f64, floor: Option<f64>, estimator: &'static str) -> Result<f64> {
    let denominator = match floor {
        Some(f) => denominator.max(f),
        None => denominator,
    };
    if denominator == 0.0 {
        return if numerator == 0.0 { Ok(0.0) } else { Err(Error::ZeroDenominator { estimator }) };
    }
    Ok(numerator / denominator)
}

fn indicator(click: bool) -> f64 {
    if click {
        1.0
    } else {
        0.0
    }
}

/// `click / P(E = 1 | displayed ranking, d)`.
pub fn delta_ips(click: bool, exam_prob: f64) -> Result<f64> {
    corrected(indicator(click), exam_prob, None, "ips")
}

/// `click / E_y[P(E = 1 | y, d) | pi_t]` under the logging policy of the click's segment.
pub fn delta_policy_aware(click: bool, exam_prob_under_policy: f64) -> Result<f64> {
    corrected(indicator(click), exam_prob_under_policy, None, "policy_aware")
}

/// `(click - beta_k) / alpha_k` for the 1-based displayed rank `k`.
pub fn delta_affine(click: bool, rank: usize, bias: &BiasParams) -> Result<f64> {
    corrected(indicator(click) - bias.beta(rank), bias.alpha(rank), None, "affine")
}

/// `(click - E[beta_d | pi_t, q]) / E[alpha_d | pi_t, q]`.
pub fn delta_intervention_oblivious(click: bool, e_alpha: f64, e_beta: f64) -> Result<f64> {
    corrected(indicator(click) - e_beta, e_alpha, None, "intervention_oblivious")
}

/// `(click - E[beta_d | Pi_T, q]) / E[alpha_d | Pi_T, q]` with expectations over every logging segment so far.
pub fn delta_intervention_aware(click: bool, stats: &ExposureStats, query: usize, doc: usize) -> Result<f64> {
    corrected(
        indicator(click) - stats.expected_beta(query, doc),
        stats.expected_alpha(query, doc),
        None,
        "intervention_aware",
    )
}

/// Exposure of every (query, document) pair under a single logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentExposure {
    /// Number of timesteps the policy was deployed.
    pub length: usize,
    /// `E_y[alpha_d | pi, q]`, indexed `[query][doc]`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// `E_y[P(E = 1 | y, d) | pi, q]`.
    pub examination: Vec<Vec<f64>>,
}

impl SegmentExposure {
    /// Expectations from each query's ranking distribution and the click model.
    pub fn from_distributions(
        dists: &[RankingDistribution],
        bias: &BiasParams,
        length: usize,
        cfg: &MarginalConfig,
    ) -> SegmentExposure {
        let mut seg = SegmentExposure {
            length,
            alpha: Vec::with_capacity(dists.len()),
            beta: Vec::with_capacity(dists.len()),
            examination: Vec::with_capacity(dists.len()),
        };
        for dist in dists {
            let m = dist.marginals(bias.cutoff(), cfg);
            let n = dist.len();
            seg.alpha.push((0..n).map(|d| m.expect(d, |k| bias.alpha(k + 1))).collect());
            seg.beta.push((0..n).map(|d| m.expect(d, |k| bias.beta(k + 1))).collect());
            seg.examination.push((0..n).map(|d| m.expect(d, |k| bias.examination(k + 1))).collect());
        }
        seg
    }

    pub fn from_policy(
        policy: &Policy,
        queries: &[Query],
        bias: &BiasParams,
        length: usize,
    ) -> Result<SegmentExposure> {
        let dists = queries.iter().map(|q| policy.distribution(q)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_distributions(&dists, bias, length, &MarginalConfig::default()))
    }
}

/// Running exposure statistics over the sequence of logging policies.
///
/// `E[alpha_d | Pi_T, q]` is the deployment-length-weighted mean of the
/// per-segment expectations, `sum_s (len_s / T) * E[alpha_d | pi_s, q]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExposureStats {
    segments: Vec<SegmentExposure>,
    mean_alpha: Vec<Vec<f64>>,
    mean_beta: Vec<Vec<f64>>,
    total: usize,
}

impl ExposureStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a segment of `segment_length` timesteps logged by `policy`.
    pub fn accumulate_exposure(
        &mut self,
        policy: &Policy,
        segment_length: usize,
        bias: &BiasParams,
        queries: &[Query],
    ) -> Result<()> {
        let seg = SegmentExposure::from_policy(policy, queries, bias, segment_length)?;
        self.push_segment(seg)
    }

    pub fn push_segment(&mut self, segment: SegmentExposure) -> Result<()> {
        if segment.length == 0 {
            return Err(Error::invalid("segment length must be at least 1"));
        }
        let shape = |t: &Vec<Vec<f64>>| t.iter().map(Vec::len).collect::<Vec<_>>();
        let seg_shape = shape(&segment.alpha);
        if shape(&segment.beta) != seg_shape || shape(&segment.examination) != seg_shape {
            return Err(Error::invalid("segment exposure tables differ in shape"));
        }
        if let Some(first) = self.segments.first() {
            if shape(&first.alpha) != seg_shape {
                return Err(Error::invalid("segment covers a different set of queries or documents"));
            }
        }
        for v in segment.alpha.iter().chain(&segment.beta).flatten() {
            if !(0.0..=1.0 + 1e-12).contains(v) {
                return Err(Error::invalid(format!("exposure expectation {v} outside [0, 1]")));
            }
        }
        self.total += segment.length;
        self.segments.push(segment);
        self.recompute();
        Ok(())
    }

    /// Replaces the length of the most recent segment (a segment still being logged).
    pub fn set_last_length(&mut self, length: usize) -> Result<()> {
        if length == 0 {
            return Err(Error::invalid("segment length must be at least 1"));
        }
        let last = self.segments.last_mut().ok_or_else(|| Error::invalid("no segment to resize"))?;
        self.total = self.total - last.length + length;
        last.length = length;
        self.recompute();
        Ok(())
    }

    fn recompute(&mut self) {
        let t = self.total as f64;
        let first = &self.segments[0];
        self.mean_alpha = first.alpha.iter().map(|r| vec![0.0; r.len()]).collect();
        self.mean_beta = self.mean_alpha.clone();
        for seg in &self.segments {
            let w = seg.length as f64 / t;
            for (q, (ra, rb)) in seg.alpha.iter().zip(&seg.beta).enumerate() {
                for d in 0..ra.len() {
                    self.mean_alpha[q][d] += w * ra[d];
                    self.mean_beta[q][d] += w * rb[d];
                }
            }
        }
    }

    pub fn total_timesteps(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[SegmentExposure] {
        &self.segments
    }

    pub fn n_queries(&self) -> usize {
        self.mean_alpha.len()
    }

    pub fn expected_alpha(&self, query: usize, doc: usize) -> f64 {
        self.mean_alpha[query][doc]
    }

    pub fn expected_beta(&self, query: usize, doc: usize) -> f64 {
        self.mean_beta[query][doc]
    }
}

/// `1/T * sum_t Delta(d | t)` for every (query, document): the per-document
/// coefficients of the estimated reward, `R_hat(pi) = sum_{q,d} lambda(d | pi, q) * w[q][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickWeights {
    weights: Vec<Vec<f64>>,
    n_entries: usize,
}

impl ClickWeights {
    pub fn query(&self, query: usize) -> &[f64] {
        &self.weights[query]
    }

    pub fn n_queries(&self) -> usize {
        self.weights.len()
    }

    pub fn n_entries(&self) -> usize {
        self.n_entries
    }

    pub fn has_signal(&self, query: usize) -> bool {
        self.weights[query].iter().any(|&w| w != 0.0)
    }

    /// `sum_d lambda(d) * w[q][d]` for one query.
    pub fn query_value(&self, query: usize, lambda: &[f64]) -> f64 {
        self.weights[query].iter().zip(lambda).map(|(w, l)| w * l).sum()
    }
}

/// Aggregates per-click corrections of the given kind over a log.
///
/// Rank-conditioned corrections (IPS, policy-aware, affine) only touch
/// displayed documents. The policy-level corrections (intervention-oblivious
/// and intervention-aware) cover every candidate, so unclicked and undisplayed
/// documents carry their `-E[beta] / E[alpha]` penalty. `clip` lower-bounds
/// every denominator.
pub fn click_weights(
    log: &InteractionLog,
    stats: &ExposureStats,
    bias: &BiasParams,
    kind: DeltaKind,
    clip: Option<f64>,
) -> Result<ClickWeights> {
    if log.is_empty() {
        return Err(Error::invalid("interaction log is empty"));
    }
    let n_queries = stats.n_queries();
    if n_queries == 0 {
        return Err(Error::invalid("exposure statistics are empty"));
    }
    let mut weights: Vec<Vec<f64>> = stats.mean_alpha.iter().map(|r| vec![0.0; r.len()]).collect();
    for entry in &log.entries {
        if entry.query >= n_queries {
            return Err(Error::UnknownQuery(format!("#{}", entry.query)));
        }
        let segment = stats
            .segments
            .get(entry.segment)
            .ok_or_else(|| Error::invalid(format!("log references unknown segment {}", entry.segment)))?;
        let row = &mut weights[entry.query];
        if entry.ranking.iter().any(|&d| d >= row.len()) {
            return Err(Error::InvalidRanking(format!("document out of range for query #{}", entry.query)));
        }
        match kind {
            DeltaKind::Ips | DeltaKind::PolicyAware | DeltaKind::Affine => {
                for (i, (&doc, &click)) in entry.ranking.iter().zip(&entry.clicks).enumerate() {
                    let rank = i + 1;
                    row[doc] += match kind {
                        DeltaKind::Ips => corrected(indicator(click), bias.examination(rank), clip, "ips")?,
                        DeltaKind::PolicyAware => {
                            corrected(indicator(click), segment.examination[entry.query][doc], clip, "policy_aware")?
                        }
                        _ => corrected(indicator(click) - bias.beta(rank), bias.alpha(rank), clip, "affine")?,
                    };
                }
            }
            DeltaKind::InterventionOblivious | DeltaKind::InterventionAware => {
                let (alpha, beta) = match kind {
                    DeltaKind::InterventionOblivious => (&segment.alpha[entry.query], &segment.beta[entry.query]),
                    _ => (&stats.mean_alpha[entry.query], &stats.mean_beta[entry.query]),
                };
                for doc in 0..row.len() {
                    let click = indicator(entry.clicked(doc));
                    row[doc] += corrected(click - beta[doc], alpha[doc], clip, kind.name())?;
                }
            }
        }
    }
    let inv = 1.0 / log.len() as f64;
    for w in weights.iter_mut().flatten() {
        *w *= inv;
    }
    Ok(ClickWeights { weights, n_entries: log.len() })
}

/// Estimated reward of `policy` from the log. With `clip`, denominators are
/// lower-bounded by `10 / sqrt(|D|)` where `|D|` is the number of logged timesteps.
pub fn estimate_reward(
    policy: &Policy,
    queries: &[Query],
    log: &InteractionLog,
    stats: &ExposureStats,
    bias: &BiasParams,
    kind: DeltaKind,
    clip: bool,
) -> Result<f64> {
    if queries.len() != stats.n_queries() {
        return Err(Error::invalid("queries do not match the exposure statistics"));
    }
    let floor = clip.then(|| clip_floor(stats.total_timesteps().max(1)));
    let weights = click_weights(log, stats, bias, kind, floor)?;
    estimate_from_weights(policy, queries, &weights)
}

/// `sum_{q,d} lambda(d | pi, q) * w[q][d]`, skipping queries with no signal.
pub fn estimate_from_weights(policy: &Policy, queries: &[Query], weights: &ClickWeights) -> Result<f64> {
    let mut total = 0.0;
    for (q, query) in queries.iter().enumerate() {
        if !weights.has_signal(q) {
            continue;
        }
        let lambda = lambda_from_marginals(&policy.rank_marginals(query)?);
        total += weights.query_value(q, &lambda);
    }
    Ok(total)
}
