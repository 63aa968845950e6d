use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::seed::SimRng;

/// Temperatures below this are treated as the zero-temperature limit
/// (deterministic descending-score order).
pub const MIN_TEMPERATURE: f64 = 1e-9;

/// How rank marginals are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalConfig {
    /// Exact subset dynamic programming is used while the number of placement
    /// prefixes to track stays at or below this bound.
    pub max_exact_states: usize,
    /// Draws used by the Monte-Carlo fallback.
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig { max_exact_states: 1 << 16, mc_samples: 10_000, mc_seed: 0 }
    }
}

/// `P[doc][rank]` for ranks `0..depth` (rank 0 is the top position).
#[derive(Debug, Clone, PartialEq)]
pub struct RankMarginals {
    n_docs: usize,
    depth: usize,
    probs: Vec<f64>,
}

impl RankMarginals {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Probability that `doc` is placed at 0-based `rank`; zero beyond the depth.
    pub fn at(&self, doc: usize, rank: usize) -> f64 {
        if rank < self.depth {
            self.probs[doc * self.depth + rank]
        } else {
            0.0
        }
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        &self.probs[doc * self.depth..(doc + 1) * self.depth]
    }

    /// Expectation of a per-rank quantity, `sum_k P[doc][k] * per_rank[k]`.
    pub fn expect(&self, doc: usize, per_rank: impl Fn(usize) -> f64) -> f64 {
        self.row(doc).iter().enumerate().map(|(k, p)| p * per_rank(k)).sum()
    }
}

/// Plackett-Luce distribution over the rankings of one query's candidates:
/// repeated softmax sampling without replacement over `score / temperature`.
#[derive(Debug, Clone)]
pub struct RankingDistribution {
    logits: Vec<f64>,
    /// `exp(logit - max logit)`.
    weights: Vec<f64>,
    temperature: f64,
    /// Set in the zero-temperature limit.
    fixed_order: Option<Vec<usize>>,
}

fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn binomials(n: usize, k_max: usize) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0usize; k_max + 1]; n + 1];
    for m in 0..=n {
        table[m][0] = 1;
        for k in 1..=k_max.min(m) {
            table[m][k] = table[m - 1][k - 1].saturating_add(if k < m { table[m - 1][k] } else { 0 });
        }
    }
    table
}

/// Set bits of a mask, lowest first.
struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }
}

/// All `k`-subsets of `0..n` as bitmasks in increasing order (Gosper's hack).
fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = u64> {
    let limit: u128 = 1u128 << n;
    let mut cur: Option<u64> = if k <= n { Some(((1u128 << k) - 1) as u64) } else { None };
    std::iter::from_fn(move || {
        let x = cur?;
        cur = if x == 0 {
            None
        } else {
            let c = x & x.wrapping_neg();
            let r = x as u128 + c as u128;
            let nx = (((r ^ x as u128) >> 2) >> c.trailing_zeros()) | r;
            (nx < limit).then_some(nx as u64)
        };
        Some(x)
    })
}

/// Position of a subset in colex order among subsets of its size: `sum_i C(c_i, i + 1)`.
fn colex_index(mask: u64, binom: &[Vec<usize>]) -> usize {
    BitIter(mask).enumerate().map(|(i, c)| binom[c][i + 1]).sum()
}

impl RankingDistribution {
    pub fn from_scores(scores: &[f64], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive and finite, got {temperature}")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        if temperature < MIN_TEMPERATURE {
            return Ok(RankingDistribution {
                logits: scores.to_vec(),
                weights: vec![0.0; scores.len()],
                temperature,
                fixed_order: Some(argsort_desc(scores)),
            });
        }
        let logits: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = logits.iter().map(|l| (l - max).exp()).collect();
        Ok(RankingDistribution { logits, weights, temperature, fixed_order: None })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn is_deterministic(&self) -> bool {
        self.fixed_order.is_some()
    }

    /// Picks the highest-logit remaining doc. Used when every remaining weight underflowed.
    fn best_remaining(&self, taken: &[bool]) -> usize {
        (0..self.len())
            .filter(|&i| !taken[i])
            .max_by(|&a, &b| self.logits[a].total_cmp(&self.logits[b]).then(b.cmp(&a)))
            .expect("a remaining document")
    }

    /// Draws a ranking prefix of length `min(depth, n)`.
    pub fn sample<R: Rng + ?Sized>(&self, depth: usize, rng: &mut R) -> Vec<usize> {
        let n = self.len();
        let depth = depth.min(n);
        if let Some(order) = &self.fixed_order {
            return order[..depth].to_vec();
        }
        let mut taken = vec![false; n];
        let mut ranking = Vec::with_capacity(depth);
        for _ in 0..depth {
            let remaining: f64 = (0..n).filter(|&i| !taken[i]).map(|i| self.weights[i]).sum();
            let pick = if remaining > 0.0 {
                let u = rng.random::<f64>() * remaining;
                let mut acc = 0.0;
                let mut chosen = None;
                let mut last_positive = None;
                for i in (0..n).filter(|&i| !taken[i]) {
                    if self.weights[i] > 0.0 {
                        last_positive = Some(i);
                    }
                    acc += self.weights[i];
                    if u < acc {
                        chosen = Some(i);
                        break;
                    }
                }
                chosen.or(last_positive).expect("positive remaining mass")
            } else {
                self.best_remaining(&taken)
            };
            taken[pick] = true;
            ranking.push(pick);
        }
        ranking
    }

    fn validate(&self, ranking: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &d in ranking {
            if d >= self.len() {
                return Err(Error::InvalidRanking(format!("document {d} out of range for {} candidates", self.len())));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::InvalidRanking(format!("document {d} appears twice")));
            }
        }
        Ok(())
    }

    /// `log pi(ranking)` for a ranking prefix.
    pub fn log_prob(&self, ranking: &[usize]) -> Result<f64> {
        self.validate(ranking)?;
        if let Some(order) = &self.fixed_order {
            return Ok(if order[..ranking.len()] == *ranking { 0.0 } else { f64::NEG_INFINITY });
        }
        let n = self.len();
        let mut taken = vec![false; n];
        let mut total = 0.0;
        for &d in ranking {
            let max = (0..n).filter(|&i| !taken[i]).map(|i| self.logits[i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..n).filter(|&i| !taken[i]).map(|i| (self.logits[i] - max).exp()).sum::<f64>().ln();
            total += self.logits[d] - lse;
            taken[d] = true;
        }
        Ok(total)
    }

    /// Gradient of `log pi(ranking)` with respect to the raw scores.
    ///
    /// Zero in the zero-temperature limit, where the distribution has no
    /// differentiable parameterization.
    pub fn log_prob_score_gradient(&self, ranking: &[usize]) -> Result<Vec<f64>> {
        self.validate(ranking)?;
        let mut grad = vec![0.0; self.len()];
        self.add_log_prob_score_gradient(ranking, 1.0, &mut grad);
        Ok(grad)
    }

    /// Adds `scale * d log pi(ranking) / d scores` into `grad`. The ranking must be valid.
    pub(crate) fn add_log_prob_score_gradient(&self, ranking: &[usize], scale: f64, grad: &mut [f64]) {
        if self.fixed_order.is_some() || scale == 0.0 {
            return;
        }
        let n = self.len();
        let c = scale / self.temperature;
        let mut taken = vec![false; n];
        for &d in ranking {
            let remaining: f64 = (0..n).filter(|&i| !taken[i]).map(|i| self.weights[i]).sum();
            grad[d] += c;
            if remaining > 0.0 {
                for i in (0..n).filter(|&i| !taken[i]) {
                    grad[i] -= c * self.weights[i] / remaining;
                }
            } else {
                let best = self.best_remaining(&taken);
                grad[best] -= c;
            }
            taken[d] = true;
        }
    }

    fn exact_state_count(n: usize, depth: usize) -> usize {
        let table = binomials(n, depth);
        (0..depth).map(|k| table[n][k]).fold(0usize, |a, b| a.saturating_add(b))
    }

    /// Rank marginals for ranks `0..min(depth, n)`; exact when tractable under `cfg`.
    pub fn marginals(&self, depth: usize, cfg: &MarginalConfig) -> RankMarginals {
        let n = self.len();
        let depth = depth.min(n);
        if let Some(order) = &self.fixed_order {
            let mut probs = vec![0.0; n * depth];
            for (rank, &doc) in order.iter().take(depth).enumerate() {
                probs[doc * depth + rank] = 1.0;
            }
            return RankMarginals { n_docs: n, depth, probs };
        }
        if n <= 64 && Self::exact_state_count(n, depth) <= cfg.max_exact_states {
            self.exact_marginals(depth)
        } else {
            let mut rng = SimRng::seed_from_u64(cfg.mc_seed);
            self.sampled_marginals(depth, cfg.mc_samples.max(1), &mut rng)
        }
    }

    /// Dynamic program over the set of documents already placed. The
    /// probability mass of each placed set is merged across orderings, so the
    /// work is proportional to the number of subsets of size below `depth`.
    ///
    /// Subsets of one size are visited in colex order (increasing bitmask),
    /// which makes a subset's position its index; the mass of a set is pulled
    /// from its parents `T \ {d}`.
    pub fn exact_marginals(&self, depth: usize) -> RankMarginals {
        let n = self.len();
        let depth = depth.min(n);
        assert!(n <= 64, "exact marginals need at most 64 candidates");
        let mut probs = vec![0.0; n * depth];
        if depth == 0 {
            return RankMarginals { n_docs: n, depth, probs };
        }
        let binom = binomials(n, depth);
        let w = &self.weights;
        let total_w: f64 = w.iter().sum();

        let mut mass: Vec<f64> = vec![1.0];
        let mut coef: Vec<f64> = Vec::new();
        let mut inside = vec![0.0; n];
        for k in 0..depth {
            // coef[S] = mass(S) / (weight not yet placed); document d outside S
            // lands at rank k with probability w_d * coef[S].
            coef.clear();
            coef.resize(mass.len(), 0.0);
            // sum over S of coef[S], and per document the part from sets containing it
            let mut coef_total = 0.0;
            inside.iter_mut().for_each(|a| *a = 0.0);
            let mut stuck: Vec<(u64, f64)> = Vec::new();
            for (idx, mask) in subsets_of_size(n, k).enumerate() {
                let f = mass[idx];
                if f == 0.0 {
                    continue;
                }
                let used: f64 = BitIter(mask).map(|i| w[i]).sum();
                let mut rem = total_w - used;
                if rem < 1e-3 * total_w {
                    rem = (0..n).map(|i| if mask >> i & 1 == 0 { w[i] } else { 0.0 }).sum();
                }
                if rem > 0.0 {
                    let c = f / rem;
                    coef[idx] = c;
                    coef_total += c;
                    for i in BitIter(mask) {
                        inside[i] += c;
                    }
                } else {
                    // every remaining weight underflowed; the top logit takes the rank
                    let taken: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    let best = self.best_remaining(&taken);
                    probs[best * depth + k] += f;
                    stuck.push((mask | 1 << best, f));
                }
            }
            for d in 0..n {
                if w[d] == 0.0 {
                    continue;
                }
                let mut outside = coef_total - inside[d];
                if outside < 1e-4 * coef_total {
                    // d sits in nearly every placed set; sum directly to avoid cancellation
                    outside =
                        subsets_of_size(n, k).zip(&coef).filter(|(mask, _)| mask >> d & 1 == 0).map(|(_, c)| c).sum();
                }
                probs[d * depth + k] += w[d] * outside;
            }
            if k + 1 == depth {
                break;
            }
            let size = k + 1;
            let mut next = vec![0.0; binom[n][size]];
            let mut bits = [0usize; 64];
            let mut prefix = [0usize; 65];
            for (idx, mask) in subsets_of_size(n, size).enumerate() {
                for (slot, c) in bits.iter_mut().zip(BitIter(mask)) {
                    *slot = c;
                }
                // colex(T \ c_j) = sum_{i<j} C(c_i, i+1) + sum_{i>j} C(c_i, i)  (0-based i)
                for i in 0..size {
                    prefix[i + 1] = prefix[i] + binom[bits[i]][i + 1];
                }
                let mut suffix = 0usize;
                let mut m = 0.0;
                for j in (0..size).rev() {
                    m += coef[prefix[j] + suffix] * w[bits[j]];
                    suffix += binom[bits[j]][j];
                }
                next[idx] = m;
            }
            for (child, f) in stuck {
                next[colex_index(child, &binom)] += f;
            }
            mass = next;
        }
        RankMarginals { n_docs: n, depth, probs }
    }

    /// Empirical placement frequencies over `samples` draws.
    pub fn sampled_marginals<R: Rng + ?Sized>(&self, depth: usize, samples: usize, rng: &mut R) -> RankMarginals {
        let n = self.len();
        let depth = depth.min(n);
        let mut probs = vec![0.0; n * depth];
        for _ in 0..samples {
            for (rank, doc) in self.sample(depth, rng).into_iter().enumerate() {
                probs[doc * depth + rank] += 1.0;
            }
        }
        let inv = 1.0 / samples as f64;
        probs.iter_mut().for_each(|p| *p *= inv);
        RankMarginals { n_docs: n, depth, probs }
    }
}
