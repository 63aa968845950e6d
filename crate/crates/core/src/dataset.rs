//! Ranking corpora: LETOR/SVMrank parsing, synthetic generation and feature scaling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Highest relevance grade in a five-grade annotation scheme.
pub const MAX_LABEL: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.documents.iter().map(|d| d.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// An immutable set of queries with graded candidate documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    queries: Vec<Query>,
    partition: Partition,
    feature_dim: usize,
}

impl Corpus {
    /// Builds a corpus, checking that every query is nonempty, ids are unique
    /// and whitespace-free, labels are within [0, 4] and every feature vector
    /// has length `feature_dim`.
    pub fn new(queries: Vec<Query>, partition: Partition, feature_dim: usize) -> Result<Self> {
        if !queries.is_empty() && feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        let mut seen = HashMap::with_capacity(queries.len());
        for q in &queries {
            if q.id.is_empty() || q.id.chars().any(|c| c.is_whitespace() || c == '#') {
                return Err(Error::invalid(format!("query id {:?} is not a valid token", q.id)));
            }
            if seen.insert(q.id.as_str(), ()).is_some() {
                return Err(Error::invalid(format!("duplicate query id {:?}", q.id)));
            }
            if q.documents.is_empty() {
                return Err(Error::invalid(format!("query {:?} has no documents", q.id)));
            }
            for d in &q.documents {
                if d.features.len() != feature_dim {
                    return Err(Error::DimensionMismatch { expected: feature_dim, actual: d.features.len() });
                }
                if d.label > MAX_LABEL {
                    return Err(Error::invalid(format!(
                        "label {} outside [0, {MAX_LABEL}] in query {:?}",
                        d.label, q.id
                    )));
                }
            }
        }
        Ok(Corpus { queries, partition, feature_dim })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn query(&self, index: usize) -> &Query {
        &self.queries[index]
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.queries.iter().position(|q| q.id == id)
    }

    /// Concatenates corpora sharing a feature dimension into one partition.
    pub fn concat(parts: &[&Corpus], partition: Partition) -> Result<Corpus> {
        let feature_dim = parts.iter().map(|c| c.feature_dim).max().unwrap_or(0);
        let queries = parts.iter().flat_map(|c| c.queries.iter().cloned()).collect();
        Corpus::new(queries, partition, feature_dim)
    }

    /// Dense LETOR text, one line per document, every feature written.
    pub fn to_letor(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            for d in &q.documents {
                write!(out, "{} qid:{}", d.label, q.id).unwrap();
                for (i, v) in d.features.iter().enumerate() {
                    write!(out, " {}:{}", i + 1, v).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Parses `<label> qid:<id> <fid>:<value> ...` lines. `#` starts a comment.
/// Documents are grouped by qid in order of first appearance; missing feature
/// ids are filled with 0.0.
pub fn parse_ranking_corpus<R: BufRead>(reader: R, partition: Partition) -> Result<Corpus> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(u8, Vec<(usize, f64)>)>> = HashMap::new();
    let mut feature_dim = 0usize;

    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let parse_err = |message: String| Error::Parse { line: line_no, message };

        let label: i64 = label_tok.parse().map_err(|_| parse_err(format!("label {label_tok:?} is not an integer")))?;
        if !(0..=MAX_LABEL as i64).contains(&label) {
            return Err(Error::LabelOutOfRange { line: line_no, label });
        }

        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|id| !id.is_empty())
            .ok_or_else(|| parse_err("expected qid:<id> after the label".into()))?;

        let mut features = Vec::new();
        for tok in tokens {
            let (fid, value) =
                tok.split_once(':').ok_or_else(|| parse_err(format!("feature token {tok:?} is not <id>:<value>")))?;
            let fid: usize =
                fid.parse().map_err(|_| parse_err(format!("feature id {fid:?} is not a positive integer")))?;
            if fid == 0 {
                return Err(parse_err("feature ids start at 1".into()));
            }
            let value: f64 =
                value.parse().map_err(|_| parse_err(format!("feature value {value:?} is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(format!("feature {fid} is not finite")));
            }
            if features.iter().any(|&(f, _)| f == fid) {
                return Err(parse_err(format!("feature id {fid} repeated")));
            }
            feature_dim = feature_dim.max(fid);
            features.push((fid, value));
        }

        if !groups.contains_key(qid) {
            order.push(qid.to_string());
        }
        groups.entry(qid.to_string()).or_default().push((label as u8, features));
    }

    let queries = order
        .into_iter()
        .map(|id| {
            let docs = groups.remove(&id).unwrap_or_default();
            let documents = docs
                .into_iter()
                .map(|(label, sparse)| {
                    let mut features = vec![0.0; feature_dim];
                    for (fid, v) in sparse {
                        features[fid - 1] = v;
                    }
                    Document { features, label }
                })
                .collect();
            Query { id, documents }
        })
        .collect();
    Corpus::new(queries, partition, feature_dim)
}

pub fn parse_ranking_str(text: &str, partition: Partition) -> Result<Corpus> {
    parse_ranking_corpus(text.as_bytes(), partition)
}

/// Per-feature min-max scaling fitted on one partition and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(corpus: &Corpus) -> Self {
        let dim = corpus.feature_dim();
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for d in corpus.queries().iter().flat_map(|q| &q.documents) {
            for (i, &v) in d.features.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        FeatureScaler { min, max }
    }

    /// Constant features map to 0.
    pub fn transform(&self, corpus: &Corpus) -> Result<Corpus> {
        if corpus.feature_dim() != self.min.len() && !corpus.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.min.len(), actual: corpus.feature_dim() });
        }
        let queries = corpus
            .queries()
            .iter()
            .map(|q| Query {
                id: q.id.clone(),
                documents: q
                    .documents
                    .iter()
                    .map(|d| Document {
                        label: d.label,
                        features: d
                            .features
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| {
                                let span = self.max[i] - self.min[i];
                                if span > 0.0 && span.is_finite() {
                                    (v - self.min[i]) / span
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Corpus::new(queries, corpus.partition(), corpus.feature_dim())
    }
}

/// Parameters of the synthetic corpus generator.
///
/// Features are uniform on [0, 1]. Labels threshold a hidden linear score,
/// standardized to unit variance, plus Gaussian noise of `label_noise`
/// standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub docs_per_query: usize,
    pub n_features: usize,
    #[serde(default = "SyntheticSpec::default_noise")]
    pub label_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Label thresholds on the standardized score; roughly 70% of documents
    /// end up non-relevant, in line with web-search annotation skew.
    pub const THRESHOLDS: [f64; 4] = [0.5, 1.1, 1.6, 2.1];

    fn default_noise() -> f64 {
        0.3
    }

    pub fn new(docs_per_query: usize, n_features: usize, seed: u64) -> Self {
        SyntheticSpec { docs_per_query, n_features, label_noise: Self::default_noise(), seed }
    }

    fn validate(&self) -> Result<()> {
        if self.docs_per_query == 0 || self.n_features == 0 {
            return Err(Error::invalid("synthetic corpus needs positive docs_per_query and n_features"));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return Err(Error::invalid("label_noise must be a finite non-negative number"));
        }
        Ok(())
    }

    /// Generates train/validation/test partitions that share one hidden labeling model.
    pub fn generate(&self, n_train: usize, n_validation: usize, n_test: usize) -> Result<SyntheticSplits> {
        self.validate()?;
        let mut world = rng_from(self.seed, &[0]);
        let hidden: Vec<f64> = (0..self.n_features).map(|_| StandardNormal.sample(&mut world)).collect();
        let mean: f64 = hidden.iter().sum::<f64>() * 0.5;
        let sd = (hidden.iter().map(|w| w * w).sum::<f64>() / 12.0).sqrt().max(f64::MIN_POSITIVE);

        let mut next_id = 0usize;
        let mut make = |count: usize, partition: Partition, stream: u64| -> Result<Corpus> {
            let mut rng = rng_from(self.seed, &[1, stream]);
            let queries = (0..count)
                .map(|_| {
                    let id = format!("q{next_id}");
                    next_id += 1;
                    let documents = (0..self.docs_per_query)
                        .map(|_| {
                            let features: Vec<f64> = (0..self.n_features).map(|_| rng.random::<f64>()).collect();
                            let raw: f64 = features.iter().zip(&hidden).map(|(x, w)| x * w).sum();
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            let z = (raw - mean) / sd + self.label_noise * noise;
                            let label = Self::THRESHOLDS.iter().filter(|&&t| z > t).count() as u8;
                            Document { features, label }
                        })
                        .collect();
                    Query { id, documents }
                })
                .collect();
            Corpus::new(queries, partition, self.n_features)
        };
        Ok(SyntheticSplits {
            train: make(n_train, Partition::Train, 0)?,
            validation: make(n_validation, Partition::Validation, 1)?,
            test: make(n_test, Partition::Test, 2)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

/// A single synthetic training corpus with default label noise.
pub fn generate_synthetic_corpus(n_queries: usize, n_docs: usize, n_features: usize, seed: u64) -> Result<Corpus> {
    if n_queries == 0 {
        return Err(Error::invalid("n_queries must be positive"));
    }
    Ok(SyntheticSpec::new(n_docs, n_features, seed).generate(n_queries, 0, 0)?.train)
}
