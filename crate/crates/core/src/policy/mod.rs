//! Scoring models and the Plackett-Luce ranking policies they induce.

mod checkpoint;
mod model;
mod plackett_luce;

use rand::Rng;

pub use model::{Forward, ModelKind, ScoringModel, DEFAULT_HIDDEN};
pub use plackett_luce::{MarginalConfig, RankMarginals, RankingDistribution, MIN_TEMPERATURE};

use crate::dataset::Query;
use crate::error::{Error, Result};

/// A stochastic ranker: model scores, divided by `temperature`, define a
/// Plackett-Luce distribution; `cutoff` is the number of ranks shown.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub model: ScoringModel,
    pub temperature: f64,
    pub cutoff: usize,
}

impl Policy {
    pub fn new(model: ScoringModel, temperature: f64, cutoff: usize) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        if cutoff == 0 {
            return Err(Error::invalid("policy cutoff must be positive"));
        }
        Ok(Policy { model, temperature, cutoff })
    }

    pub fn score_documents(&self, query: &Query) -> Result<Vec<f64>> {
        self.model.score_query(query)
    }

    pub fn distribution(&self, query: &Query) -> Result<RankingDistribution> {
        RankingDistribution::from_scores(&self.score_documents(query)?, self.temperature)
    }

    /// A ranking prefix of length `min(cutoff, |D_q|)`.
    pub fn sample_ranking<R: Rng + ?Sized>(&self, query: &Query, rng: &mut R) -> Result<Vec<usize>> {
        Ok(self.distribution(query)?.sample(self.cutoff, rng))
    }

    /// Rank marginals over the first `cutoff` ranks.
    pub fn rank_marginals(&self, query: &Query) -> Result<RankMarginals> {
        self.rank_marginals_with(query, self.cutoff, &MarginalConfig::default())
    }

    pub fn rank_marginals_with(&self, query: &Query, depth: usize, cfg: &MarginalConfig) -> Result<RankMarginals> {
        Ok(self.distribution(query)?.marginals(depth, cfg))
    }

    /// Gradient of `log pi(ranking | q)` with respect to the model parameters.
    pub fn log_prob_gradient(&self, query: &Query, ranking: &[usize]) -> Result<Vec<f64>> {
        let fwd = self.model.forward(query)?;
        let dist = RankingDistribution::from_scores(&fwd.scores, self.temperature)?;
        let upstream = dist.log_prob_score_gradient(ranking)?;
        let mut grad = vec![0.0; self.model.params().len()];
        self.model.backward(query, &fwd, &upstream, &mut grad);
        Ok(grad)
    }

    pub fn log_prob(&self, query: &Query, ranking: &[usize]) -> Result<f64> {
        self.distribution(query)?.log_prob(ranking)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Document;

    fn two_doc_query() -> Query {
        Query {
            id: "q".into(),
            documents: vec![
                Document { features: vec![0.3, -1.2], label: 1 },
                Document { features: vec![1.1, 0.4], label: 0 },
            ],
        }
    }

    #[test]
    fn linear_log_prob_gradient_matches_finite_differences() {
        let q = two_doc_query();
        let policy = Policy::new(ScoringModel::linear(vec![0.7, -0.2]).unwrap(), 1.0, 2).unwrap();
        for ranking in [vec![0, 1], vec![1, 0], vec![1]] {
            let g = policy.log_prob_gradient(&q, &ranking).unwrap();
            let eps = 1e-6;
            for k in 0..2 {
                let mut up = policy.clone();
                up.model.params_mut()[k] += eps;
                let mut down = policy.clone();
                down.model.params_mut()[k] -= eps;
                let fd = (up.log_prob(&q, &ranking).unwrap() - down.log_prob(&q, &ranking).unwrap()) / (2.0 * eps);
                assert!((fd - g[k]).abs() <= 1e-4 * fd.abs(), "{ranking:?} param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn single_doc_gradient_is_zero() {
        let q = Query { id: "q".into(), documents: vec![Document { features: vec![2.0, 5.0], label: 3 }] };
        let policy = Policy::new(ScoringModel::linear(vec![1.0, 1.0]).unwrap(), 1.0, 5).unwrap();
        assert_eq!(policy.log_prob_gradient(&q, &[0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sample_length_is_min_of_cutoff_and_candidates() {
        use rand::SeedableRng;
        let mut rng = crate::seed::SimRng::seed_from_u64(0);
        let q = two_doc_query();
        let p = Policy::new(ScoringModel::linear(vec![0.0, 0.0]).unwrap(), 1.0, 1).unwrap();
        assert_eq!(p.sample_ranking(&q, &mut rng).unwrap().len(), 1);
        let p = Policy { cutoff: 5, ..p };
        let y = p.sample_ranking(&q, &mut rng).unwrap();
        assert_eq!(y.len(), 2);
        assert_ne!(y[0], y[1]);
    }

    #[test]
    fn rejects_bad_temperature() {
        let m = ScoringModel::linear(vec![1.0]).unwrap();
        assert!(Policy::new(m.clone(), 0.0, 5).is_err());
        assert!(Policy::new(m, f64::NAN, 5).is_err());
    }
}
