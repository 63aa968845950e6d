//! Click simulation under position, item-selection and trust bias.
//!
//! The click probability of a document displayed at rank `k` is affine in its
//! relevance probability: `alpha_k * P(R = 1 | d, q) + beta_k`. Ranks beyond the
//! display cutoff are never examined.

use std::io::{BufRead, Write};
use std::sync::Once;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Query};
use crate::error::{Error, Result};
use crate::policy::{MarginalConfig, Policy, RankingDistribution};

const EPS: f64 = 1e-12;

/// Relevance probability of a graded label: `0.25 * label`.
pub fn relevance_probability(label: u8) -> f64 {
    0.25 * f64::from(label)
}

/// Per-rank click-model parameters for the displayed top-`cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBias", into = "RawBias")]
pub struct BiasParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    examination: Option<ExaminationModel>,
}

#[derive(Debug, Clone, PartialEq)]
struct ExaminationModel {
    examination: Vec<f64>,
    click_relevant: Vec<f64>,
    click_nonrelevant: Vec<f64>,
}

/// Serialized form: either `alpha`/`beta`, or the examination-model triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBias {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    examination: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    click_relevant: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    click_nonrelevant: Option<Vec<f64>>,
}

impl TryFrom<RawBias> for BiasParams {
    type Error = Error;
    fn try_from(raw: RawBias) -> Result<Self> {
        match raw {
            RawBias {
                alpha: Some(a),
                beta: Some(b),
                examination: None,
                click_relevant: None,
                click_nonrelevant: None,
            } => BiasParams::new(a, b),
            RawBias {
                alpha: None,
                beta: None,
                examination: Some(e),
                click_relevant: Some(r),
                click_nonrelevant: Some(n),
            } => BiasParams::from_examination_model(&e, &r, &n),
            _ => Err(Error::invalid(
                "bias needs either alpha and beta, or examination, click_relevant and click_nonrelevant",
            )),
        }
    }
}

impl From<BiasParams> for RawBias {
    fn from(b: BiasParams) -> Self {
        match b.examination {
            Some(m) => RawBias {
                alpha: None,
                beta: None,
                examination: Some(m.examination),
                click_relevant: Some(m.click_relevant),
                click_nonrelevant: Some(m.click_nonrelevant),
            },
            None => RawBias {
                alpha: Some(b.alpha),
                beta: Some(b.beta),
                examination: None,
                click_relevant: None,
                click_nonrelevant: None,
            },
        }
    }
}

static IPS_FALLBACK: Once = Once::new();

impl BiasParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("bias vectors must be nonempty"));
        }
        if alpha.len() != beta.len() {
            return Err(Error::invalid(format!("alpha has {} ranks but beta has {}", alpha.len(), beta.len())));
        }
        for (k, (a, b)) in alpha.iter().zip(&beta).enumerate() {
            if !(a.is_finite() && b.is_finite() && *a >= 0.0 && *b >= 0.0 && a + b <= 1.0 + EPS) {
                return Err(Error::invalid(format!(
                    "rank {}: need alpha >= 0, beta >= 0 and alpha + beta <= 1 (alpha = {a}, beta = {b})",
                    k + 1
                )));
            }
        }
        Ok(BiasParams { alpha, beta, examination: None })
    }

    /// `alpha_k = P(E|k) (P(C|k,R=1,E) - P(C|k,R=0,E))`, `beta_k = P(E|k) P(C|k,R=0,E)`.
    pub fn from_examination_model(p_exam: &[f64], p_click_rel: &[f64], p_click_nonrel: &[f64]) -> Result<Self> {
        if p_exam.len() != p_click_rel.len() || p_exam.len() != p_click_nonrel.len() {
            return Err(Error::invalid("examination-model vectors differ in length"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for k in 0..p_exam.len() {
            let (e, r, n) = (p_exam[k], p_click_rel[k], p_click_nonrel[k]);
            if !(unit(e) && unit(r) && unit(n)) {
                return Err(Error::invalid(format!("rank {}: probabilities must lie in [0, 1]", k + 1)));
            }
            if r < n {
                return Err(Error::invalid(format!(
                    "rank {}: relevant click probability {r} below non-relevant {n}",
                    k + 1
                )));
            }
        }
        let alpha = (0..p_exam.len()).map(|k| p_exam[k] * (p_click_rel[k] - p_click_nonrel[k])).collect();
        let beta = (0..p_exam.len()).map(|k| p_exam[k] * p_click_nonrel[k]).collect();
        let mut bias = Self::new(alpha, beta)?;
        bias.examination = Some(ExaminationModel {
            examination: p_exam.to_vec(),
            click_relevant: p_click_rel.to_vec(),
            click_nonrelevant: p_click_nonrel.to_vec(),
        });
        Ok(bias)
    }

    /// Top-5 trust-bias parameters measured on real search traffic.
    pub fn top5_trust_bias() -> Self {
        Self::new(vec![0.35, 0.53, 0.55, 0.54, 0.52], vec![0.65, 0.26, 0.15, 0.11, 0.08]).expect("valid preset")
    }

    pub fn cutoff(&self) -> usize {
        self.alpha.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// `alpha` at 1-based `rank`; zero below the cutoff.
    pub fn alpha(&self, rank: usize) -> f64 {
        rank.checked_sub(1).and_then(|i| self.alpha.get(i)).copied().unwrap_or(0.0)
    }

    pub fn beta(&self, rank: usize) -> f64 {
        rank.checked_sub(1).and_then(|i| self.beta.get(i)).copied().unwrap_or(0.0)
    }

    /// Examination probability at 1-based `rank`. Without an examination
    /// model, `alpha + beta` stands in for it.
    pub fn examination(&self, rank: usize) -> f64 {
        match &self.examination {
            Some(m) => rank.checked_sub(1).and_then(|i| m.examination.get(i)).copied().unwrap_or(0.0),
            None => {
                IPS_FALLBACK.call_once(|| {
                    log::warn!("no examination model given; using alpha + beta as examination propensity")
                });
                self.alpha(rank) + self.beta(rank)
            }
        }
    }

    pub fn has_examination_model(&self) -> bool {
        self.examination.is_some()
    }
}

/// `alpha_k * 0.25 * label + beta_k` for `rank <= cutoff`, else 0.
pub fn click_probability(label: u8, rank: usize, bias: &BiasParams) -> f64 {
    if rank == 0 || rank > bias.cutoff() {
        return 0.0;
    }
    bias.alpha(rank) * relevance_probability(label) + bias.beta(rank)
}

/// One simulated timestep: the ranking shown for a query and the clicks on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub timestep: usize,
    /// Index of the logging-policy segment active at this timestep.
    pub segment: usize,
    /// Position of the query in the corpus the log was gathered on.
    pub query: usize,
    /// Displayed documents (indices into the query's candidates), top first.
    pub ranking: Vec<usize>,
    pub clicks: Vec<bool>,
}

impl LogEntry {
    pub fn rank_of(&self, doc: usize) -> Option<usize> {
        self.ranking.iter().position(|&d| d == doc).map(|i| i + 1)
    }

    pub fn clicked(&self, doc: usize) -> bool {
        self.ranking.iter().zip(&self.clicks).any(|(&d, &c)| d == doc && c)
    }
}

/// Simulates one interaction with a precomputed ranking distribution.
pub fn simulate_with<R: Rng + ?Sized>(
    dist: &RankingDistribution,
    query: &Query,
    query_index: usize,
    bias: &BiasParams,
    timestep: usize,
    segment: usize,
    rng: &mut R,
) -> LogEntry {
    let ranking = dist.sample(bias.cutoff(), rng);
    let clicks = ranking
        .iter()
        .enumerate()
        .map(|(i, &doc)| {
            let p = click_probability(query.documents[doc].label, i + 1, bias);
            rng.random::<f64>() < p
        })
        .collect();
    LogEntry { timestep, segment, query: query_index, ranking, clicks }
}

/// Draws a top-`cutoff` ranking from the policy, then independent clicks per displayed document.
pub fn simulate_interaction<R: Rng + ?Sized>(
    policy: &Policy,
    query: &Query,
    query_index: usize,
    bias: &BiasParams,
    timestep: usize,
    segment: usize,
    rng: &mut R,
) -> Result<LogEntry> {
    let dist = policy.distribution(query)?;
    Ok(simulate_with(&dist, query, query_index, bias, timestep, segment, rng))
}

/// Click probability of `doc` marginalized over the policy's rankings:
/// `E[alpha_d | pi, q] * P(R = 1 | d, q) + E[beta_d | pi, q]`.
pub fn policy_click_probability(policy: &Policy, doc: usize, query: &Query, bias: &BiasParams) -> Result<f64> {
    if doc >= query.len() {
        return Err(Error::UnknownDocument { query: query.id.clone(), doc });
    }
    let marginals = policy.rank_marginals_with(query, bias.cutoff(), &MarginalConfig::default())?;
    let e_alpha = marginals.expect(doc, |k| bias.alpha(k + 1));
    let e_beta = marginals.expect(doc, |k| bias.beta(k + 1));
    Ok(e_alpha * relevance_probability(query.documents[doc].label) + e_beta)
}

/// The interaction data set: one entry per timestep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub entries: Vec<LogEntry>,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    /// The first `len` timesteps.
    pub fn prefix(&self, len: usize) -> InteractionLog {
        InteractionLog { entries: self.entries[..len.min(self.len())].to_vec() }
    }

    /// Writes `t segment qid ranked_ids clicks` lines; query ids come from `corpus`.
    pub fn write<W: Write>(&self, corpus: &Corpus, mut w: W) -> Result<()> {
        for e in &self.entries {
            let q = corpus.queries().get(e.query).ok_or_else(|| Error::UnknownQuery(format!("#{}", e.query)))?;
            write!(w, "{} {} {}", e.timestep, e.segment, q.id)?;
            for d in &e.ranking {
                write!(w, " {d}")?;
            }
            let clicks: String = e.clicks.iter().map(|&c| if c { '1' } else { '0' }).collect();
            writeln!(w, " {clicks}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R, corpus: &Corpus) -> Result<InteractionLog> {
        let index: std::collections::HashMap<&str, usize> =
            corpus.queries().iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
        let mut log = InteractionLog::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: n + 1, message };
            if tokens.len() < 4 {
                return Err(err("expected `t segment qid ranked_ids clicks`".into()));
            }
            let num = |t: &str, what: &str| t.parse::<usize>().map_err(|_| err(format!("bad {what} {t:?}")));
            let timestep = num(tokens[0], "timestep")?;
            let segment = num(tokens[1], "segment")?;
            let query = *index.get(tokens[2]).ok_or_else(|| Error::UnknownQuery(tokens[2].to_string()))?;
            let ranking =
                tokens[3..tokens.len() - 1].iter().map(|t| num(t, "document id")).collect::<Result<Vec<_>>>()?;
            let click_tok = tokens[tokens.len() - 1];
            let clicks = click_tok
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(err(format!("bad click string {click_tok:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if clicks.len() != ranking.len() {
                return Err(err(format!("{} clicks for {} displayed documents", clicks.len(), ranking.len())));
            }
            let n_docs = corpus.query(query).len();
            let mut seen = vec![false; n_docs];
            for &d in &ranking {
                if d >= n_docs || std::mem::replace(&mut seen[d], true) {
                    return Err(err(format!("ranking is not a prefix permutation of {n_docs} candidates")));
                }
            }
            log.push(LogEntry { timestep, segment, query, ranking, clicks });
        }
        Ok(log)
    }
}
