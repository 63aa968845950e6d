//! DCG metric weights, expected reward and NDCG of stochastic policies.

use crate::clicksim::relevance_probability;
use crate::dataset::{Corpus, Query};
use crate::error::{Error, Result};
use crate::policy::{Policy, RankMarginals};

/// `1 / log2(rank + 1)` for a 1-based rank.
pub fn dcg_discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Per-document metric weights `lambda(d | D_q, pi, q)` of one query.
pub type MetricWeights = Vec<f64>;

/// Expected DCG discount of every document; ranks past the marginals' depth contribute 0.
pub fn lambda_from_marginals(marginals: &RankMarginals) -> MetricWeights {
    (0..marginals.n_docs()).map(|d| marginals.expect(d, |k| dcg_discount(k + 1))).collect()
}

pub fn dcg_lambda(policy: &Policy, query: &Query) -> Result<MetricWeights> {
    Ok(lambda_from_marginals(&policy.rank_marginals(query)?))
}

/// `sum_d lambda(d) * P(R = 1 | d, q)`: the expected DCG of the policy on one query.
pub fn query_reward(lambda: &[f64], query: &Query) -> f64 {
    lambda.iter().zip(query.labels()).map(|(l, label)| l * relevance_probability(label)).sum()
}

/// Reward averaged over queries drawn uniformly from the corpus.
pub fn true_reward(policy: &Policy, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in corpus.queries() {
        total += query_reward(&dcg_lambda(policy, q)?, q);
    }
    Ok(total / corpus.len() as f64)
}

/// DCG of the label-sorted ranking truncated at `cutoff`, gain `0.25 * label`.
pub fn ideal_dcg(query: &Query, cutoff: usize) -> f64 {
    let mut labels: Vec<u8> = query.labels().collect();
    labels.sort_unstable_by(|a, b| b.cmp(a));
    labels.iter().take(cutoff).enumerate().map(|(i, &l)| relevance_probability(l) * dcg_discount(i + 1)).sum()
}

/// Expected DCG@cutoff over ideal DCG@cutoff, averaged over queries with any
/// relevant document. The cutoff is the policy's.
pub fn ndcg(policy: &Policy, corpus: &Corpus) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for q in corpus.queries() {
        let ideal = ideal_dcg(q, policy.cutoff);
        if ideal <= 0.0 {
            continue;
        }
        let expected = query_reward(&dcg_lambda(policy, q)?, q);
        total += (expected / ideal).clamp(0.0, 1.0);
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::NoRelevantQueries);
    }
    Ok(total / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Document, Partition};
    use crate::policy::ScoringModel;

    /// Single-feature documents; with a positive weight, higher feature ranks higher.
    fn query(id: &str, feats_labels: &[(f64, u8)]) -> Query {
        Query {
            id: id.into(),
            documents: feats_labels.iter().map(|&(f, label)| Document { features: vec![f], label }).collect(),
        }
    }

    fn greedy(cutoff: usize) -> Policy {
        Policy::new(ScoringModel::linear(vec![1.0]).unwrap(), 1e-12, cutoff).unwrap()
    }

    #[test]
    fn lambda_of_deterministic_policy_is_the_discount() {
        let q = query("a", &[(3.0, 0), (2.0, 0), (1.0, 0)]);
        let l = dcg_lambda(&greedy(5), &q).unwrap();
        assert_eq!(l[0], 1.0);
        assert_eq!(l[2], 0.5);
        assert_eq!(l[1], dcg_discount(2));
    }

    #[test]
    fn lambda_of_half_half_mixture() {
        // a policy that puts doc 0 at rank 1 or rank 3 with probability 1/2
        let m = 0.5 * dcg_discount(1) + 0.5 * dcg_discount(3);
        assert!((m - 0.75).abs() < 1e-15);
    }

    #[test]
    fn lambda_is_zero_beyond_cutoff() {
        let q = query("a", &[(3.0, 0), (2.0, 0), (1.0, 4)]);
        assert_eq!(dcg_lambda(&greedy(2), &q).unwrap()[2], 0.0);
    }

    #[test]
    fn true_reward_cases() {
        let zeros = Corpus::new(vec![query("a", &[(1.0, 0), (2.0, 0)])], Partition::Test, 1).unwrap();
        assert_eq!(true_reward(&greedy(5), &zeros).unwrap(), 0.0);
        let one = Corpus::new(vec![query("a", &[(1.0, 4)])], Partition::Test, 1).unwrap();
        assert_eq!(true_reward(&greedy(5), &one).unwrap(), 1.0);
    }

    #[test]
    fn true_reward_is_invariant_to_duplicating_queries() {
        let policy = Policy::new(ScoringModel::linear(vec![0.8]).unwrap(), 1.0, 5).unwrap();
        let qa = query("a", &[(0.2, 3), (0.9, 0), (0.5, 1)]);
        let qb = query("b", &[(0.1, 0), (0.7, 4)]);
        let base = Corpus::new(vec![qa.clone(), qb.clone()], Partition::Test, 1).unwrap();
        let dup = Corpus::new(
            vec![qa.clone(), qb.clone(), Query { id: "a2".into(), ..qa }, Query { id: "b2".into(), ..qb }],
            Partition::Test,
            1,
        )
        .unwrap();
        let (r1, r2) = (true_reward(&policy, &base).unwrap(), true_reward(&policy, &dup).unwrap());
        assert!((r1 - r2).abs() < 1e-15);
    }

    #[test]
    fn ndcg_cases() {
        let c = Corpus::new(vec![query("a", &[(2.0, 4), (1.0, 0)])], Partition::Test, 1).unwrap();
        assert_eq!(ndcg(&greedy(5), &c).unwrap(), 1.0);
        let reversed = Policy::new(ScoringModel::linear(vec![-1.0]).unwrap(), 1e-12, 5).unwrap();
        let expected = (0.0 / 1.0 + 1.0 / 3f64.log2()) / (1.0 / 2f64.log2());
        assert!((ndcg(&reversed, &c).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.6309).abs() < 1e-4);

        let all_zero = Corpus::new(vec![query("a", &[(2.0, 0)])], Partition::Test, 1).unwrap();
        assert!(matches!(ndcg(&greedy(5), &all_zero), Err(Error::NoRelevantQueries)));
    }

    #[test]
    fn ndcg_skips_queries_without_relevant_documents() {
        let c =
            Corpus::new(vec![query("a", &[(2.0, 4), (1.0, 0)]), query("z", &[(1.0, 0), (3.0, 0)])], Partition::Test, 1)
                .unwrap();
        assert_eq!(ndcg(&greedy(5), &c).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_is_bounded_for_random_policies() {
        use crate::dataset::generate_synthetic_corpus;
        let c = generate_synthetic_corpus(10, 8, 4, 7).unwrap();
        for seed in 0..5u64 {
            use rand::SeedableRng;
            let mut rng = crate::seed::SimRng::seed_from_u64(seed);
            let m = ScoringModel::init(crate::policy::ModelKind::Mlp, 4, 6, &mut rng).unwrap();
            let v = ndcg(&Policy::new(m, 0.3, 5).unwrap(), &c).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
