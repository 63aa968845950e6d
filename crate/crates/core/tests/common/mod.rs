//! Brute-force oracles shared by the integration tests. Everything here is
//! computed by direct enumeration, independently of the library's dynamic
//! programs and samplers.
#![allow(dead_code)]

use ltr_lab::clicksim::{BiasParams, InteractionLog, LogEntry};
use ltr_lab::dataset::{Document, Query};
use ltr_lab::policy::{Policy, ScoringModel};

pub fn query(features: &[&[f64]], labels: &[u8]) -> Query {
    Query {
        id: "q".into(),
        documents: features.iter().zip(labels).map(|(f, &label)| Document { features: f.to_vec(), label }).collect(),
    }
}

pub fn linear(weights: &[f64], temperature: f64, cutoff: usize) -> Policy {
    Policy::new(ScoringModel::linear(weights.to_vec()).unwrap(), temperature, cutoff).unwrap()
}

/// All ordered selections of `depth` distinct items from `0..n`.
pub fn prefixes(n: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..depth.min(n) {
        let mut grown = Vec::new();
        for p in &out {
            for d in 0..n {
                if !p.contains(&d) {
                    let mut q = p.clone();
                    q.push(d);
                    grown.push(q);
                }
            }
        }
        out = grown;
    }
    out
}

/// Linear scores `w . x / temperature` of every document.
pub fn logits(weights: &[f64], temperature: f64, q: &Query) -> Vec<f64> {
    q.documents.iter().map(|d| d.features.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / temperature).collect()
}

/// Plackett-Luce probability of a ranking prefix from raw logits.
pub fn pl_prob(logits: &[f64], prefix: &[usize]) -> f64 {
    let mut remaining: Vec<usize> = (0..logits.len()).collect();
    let mut p = 1.0;
    for &d in prefix {
        let z: f64 = remaining.iter().map(|&i| logits[i].exp()).sum();
        p *= logits[d].exp() / z;
        remaining.retain(|&i| i != d);
    }
    p
}

/// `grad_w log PL(prefix)` for a linear model, in closed form.
pub fn pl_log_prob_grad(weights: &[f64], temperature: f64, q: &Query, prefix: &[usize]) -> Vec<f64> {
    let s = logits(weights, temperature, q);
    let dim = weights.len();
    let mut remaining: Vec<usize> = (0..s.len()).collect();
    let mut g = vec![0.0; dim];
    for &d in prefix {
        let z: f64 = remaining.iter().map(|&i| s[i].exp()).sum();
        for j in 0..dim {
            let mean: f64 = remaining.iter().map(|&i| s[i].exp() / z * q.documents[i].features[j]).sum();
            g[j] += (q.documents[d].features[j] - mean) / temperature;
        }
        remaining.retain(|&i| i != d);
    }
    g
}

pub fn discount(rank1: usize) -> f64 {
    1.0 / ((rank1 + 1) as f64).log2()
}

/// Expected DCG discount of every document under a linear policy, by enumeration.
pub fn lambda(weights: &[f64], temperature: f64, cutoff: usize, q: &Query) -> Vec<f64> {
    let s = logits(weights, temperature, q);
    let mut l = vec![0.0; q.len()];
    for y in prefixes(q.len(), cutoff) {
        let p = pl_prob(&s, &y);
        for (i, &d) in y.iter().enumerate() {
            l[d] += p * discount(i + 1);
        }
    }
    l
}

/// `sum_d lambda_d * 0.25 * label_d`.
pub fn true_reward(weights: &[f64], temperature: f64, cutoff: usize, q: &Query) -> f64 {
    lambda(weights, temperature, cutoff, q).iter().zip(&q.documents).map(|(l, d)| l * 0.25 * d.label as f64).sum()
}

/// Every (ranking, click vector, probability) a single timestep can produce
/// under a linear logging policy and the click model `alpha * 0.25 * label + beta`.
pub fn outcomes(weights: &[f64], temperature: f64, q: &Query, bias: &BiasParams) -> Vec<(Vec<usize>, Vec<bool>, f64)> {
    let s = logits(weights, temperature, q);
    let depth = bias.alphas().len();
    let mut out = Vec::new();
    for y in prefixes(q.len(), depth) {
        let py = pl_prob(&s, &y);
        let k = y.len();
        for bits in 0u32..(1 << k) {
            let mut p = py;
            let clicks: Vec<bool> = (0..k).map(|i| bits >> i & 1 == 1).collect();
            for (i, &d) in y.iter().enumerate() {
                let pc = bias.alphas()[i] * 0.25 * q.documents[d].label as f64 + bias.betas()[i];
                p *= if clicks[i] { pc } else { 1.0 - pc };
            }
            out.push((y.clone(), clicks, p));
        }
    }
    out
}

pub fn single_entry_log(segment: usize, ranking: Vec<usize>, clicks: Vec<bool>) -> InteractionLog {
    let mut log = InteractionLog::new();
    log.push(LogEntry { timestep: 1, segment, query: 0, ranking, clicks });
    log
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
