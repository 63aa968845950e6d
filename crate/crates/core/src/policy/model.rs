use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Query;
use crate::error::{Error, Result};

/// Hidden width of each layer in the default MLP.
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Per-document scoring function.
///
/// Parameters are kept in one flat row-major buffer. For the linear model it
/// is the weight vector (no bias: a shared offset cannot change a softmax).
/// For the MLP the layout is `W1 (h x d), b1 (h), W2 (h x h), b2 (h), w3 (h), b3`,
/// with sigmoid activations on both hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ScoringModel {
    pub fn param_count(kind: ModelKind, input_dim: usize, hidden: usize) -> usize {
        match kind {
            ModelKind::Linear => input_dim,
            ModelKind::Mlp => hidden * input_dim + hidden + hidden * hidden + hidden + hidden + 1,
        }
    }

    pub fn from_params(kind: ModelKind, input_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("model input dimension must be positive"));
        }
        if kind == ModelKind::Mlp && hidden == 0 {
            return Err(Error::invalid("mlp hidden width must be positive"));
        }
        let hidden = if kind == ModelKind::Linear { 0 } else { hidden };
        let expected = Self::param_count(kind, input_dim, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(ScoringModel { kind, input_dim, hidden, params })
    }

    pub fn linear(weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        Self::from_params(ModelKind::Linear, dim, 0, weights)
    }

    pub fn zeros(kind: ModelKind, input_dim: usize, hidden: usize) -> Result<Self> {
        let hidden = if kind == ModelKind::Linear { 0 } else { hidden };
        Self::from_params(kind, input_dim, hidden, vec![0.0; Self::param_count(kind, input_dim, hidden)])
    }

    /// Every weight and bias uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(kind: ModelKind, input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(kind, input_dim, hidden)?;
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in slice {
                *p = rng.random_range(-bound..=bound);
            }
        };
        match kind {
            ModelKind::Linear => fill(&mut model.params, input_dim),
            ModelKind::Mlp => {
                let h = model.hidden;
                let l = model.layout();
                fill(&mut model.params[l.w1..l.w2], input_dim);
                fill(&mut model.params[l.w2..l.w3], h);
                fill(&mut model.params[l.w3..], h);
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        let (d, h) = (self.input_dim, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        Layout { w1, b1, w2, b2, w3, b3 }
    }

    fn check_dim(&self, query: &Query) -> Result<()> {
        match query.documents.iter().find(|d| d.features.len() != self.input_dim) {
            Some(d) => Err(Error::DimensionMismatch { expected: self.input_dim, actual: d.features.len() }),
            None => Ok(()),
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Linear => dot(&self.params, x),
            ModelKind::Mlp => {
                let mut h1 = vec![0.0; self.hidden];
                let mut h2 = vec![0.0; self.hidden];
                self.mlp_forward(x, &mut h1, &mut h2)
            }
        }
    }

    fn mlp_forward(&self, x: &[f64], h1: &mut [f64], h2: &mut [f64]) -> f64 {
        let (d, h) = (self.input_dim, self.hidden);
        let l = self.layout();
        let p = &self.params;
        for j in 0..h {
            h1[j] = sigmoid(p[l.b1 + j] + dot(&p[l.w1 + j * d..l.w1 + (j + 1) * d], x));
        }
        for j in 0..h {
            h2[j] = sigmoid(p[l.b2 + j] + dot(&p[l.w2 + j * h..l.w2 + (j + 1) * h], h1));
        }
        p[l.b3] + dot(&p[l.w3..l.w3 + h], h2)
    }

    pub fn score_query(&self, query: &Query) -> Result<Vec<f64>> {
        self.check_dim(query)?;
        Ok(query.documents.iter().map(|doc| self.score(&doc.features)).collect())
    }

    /// Scores a query and keeps the hidden activations for [`ScoringModel::backward`].
    pub fn forward(&self, query: &Query) -> Result<Forward> {
        self.check_dim(query)?;
        let n = query.len();
        let h = self.hidden;
        let mut fwd = Forward { scores: Vec::with_capacity(n), h1: vec![0.0; n * h], h2: vec![0.0; n * h] };
        for (i, doc) in query.documents.iter().enumerate() {
            let s = match self.kind {
                ModelKind::Linear => dot(&self.params, &doc.features),
                ModelKind::Mlp => {
                    let (h1, h2) = (&mut fwd.h1[i * h..(i + 1) * h], &mut fwd.h2[i * h..(i + 1) * h]);
                    self.mlp_forward(&doc.features, h1, h2)
                }
            };
            fwd.scores.push(s);
        }
        Ok(fwd)
    }

    /// Adds `sum_i upstream[i] * d score_i / d params` into `grad`.
    pub fn backward(&self, query: &Query, fwd: &Forward, upstream: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(upstream.len(), query.len());
        match self.kind {
            ModelKind::Linear => {
                for (doc, &g) in query.documents.iter().zip(upstream) {
                    if g != 0.0 {
                        axpy(g, &doc.features, grad);
                    }
                }
            }
            ModelKind::Mlp => {
                let (d, h) = (self.input_dim, self.hidden);
                let l = self.layout();
                let p = &self.params;
                let mut delta2 = vec![0.0; h];
                let mut delta1 = vec![0.0; h];
                for (i, (doc, &g)) in query.documents.iter().zip(upstream).enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let h1 = &fwd.h1[i * h..(i + 1) * h];
                    let h2 = &fwd.h2[i * h..(i + 1) * h];
                    grad[l.b3] += g;
                    axpy(g, h2, &mut grad[l.w3..l.w3 + h]);
                    for j in 0..h {
                        delta2[j] = g * p[l.w3 + j] * h2[j] * (1.0 - h2[j]);
                    }
                    delta1.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..h {
                        let dj = delta2[j];
                        if dj == 0.0 {
                            continue;
                        }
                        grad[l.b2 + j] += dj;
                        axpy(dj, h1, &mut grad[l.w2 + j * h..l.w2 + (j + 1) * h]);
                        axpy(dj, &p[l.w2 + j * h..l.w2 + (j + 1) * h], &mut delta1);
                    }
                    for j in 0..h {
                        let dj = delta1[j] * h1[j] * (1.0 - h1[j]);
                        if dj == 0.0 {
                            continue;
                        }
                        grad[l.b1 + j] += dj;
                        axpy(dj, &doc.features, &mut grad[l.w1 + j * d..l.w1 + (j + 1) * d]);
                    }
                }
            }
        }
    }
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

/// Scores plus cached hidden activations of one query.
#[derive(Debug, Clone)]
pub struct Forward {
    pub scores: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Document;
    use rand::SeedableRng;

    fn query(feats: &[&[f64]]) -> Query {
        Query { id: "q".into(), documents: feats.iter().map(|f| Document { features: f.to_vec(), label: 0 }).collect() }
    }

    #[test]
    fn linear_scores_are_dot_products() {
        let m = ScoringModel::linear(vec![1.0, 0.0]).unwrap();
        assert_eq!(m.score_query(&query(&[&[2.0, 5.0]])).unwrap(), vec![2.0]);
        let z = ScoringModel::zeros(ModelKind::Linear, 2, 0).unwrap();
        assert_eq!(z.score_query(&query(&[&[2.0, 5.0], &[1.0, 1.0]])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_mlp_scores_are_equal() {
        let m = ScoringModel::zeros(ModelKind::Mlp, 3, 4).unwrap();
        let s = m.score_query(&query(&[&[1.0, 2.0, 3.0], &[-4.0, 0.5, 9.0]])).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = ScoringModel::linear(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            m.score_query(&query(&[&[1.0, 2.0, 3.0]])),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let model = ScoringModel::init(ModelKind::Mlp, 3, 5, &mut rng).unwrap();
        let q = query(&[&[0.2, 0.9, -0.4], &[1.0, -0.3, 0.5]]);
        let upstream = [0.7, -1.3];
        let fwd = model.forward(&q).unwrap();
        let mut grad = vec![0.0; model.params().len()];
        model.backward(&q, &fwd, &upstream, &mut grad);

        let objective =
            |m: &ScoringModel| -> f64 { m.score_query(&q).unwrap().iter().zip(&upstream).map(|(s, g)| s * g).sum() };
        let eps = 1e-6;
        for k in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[k] += eps;
            let mut minus = model.clone();
            minus.params_mut()[k] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = ScoringModel::init(ModelKind::Mlp, 16, 32, &mut rng).unwrap();
        let bound_in = 1.0 / 4.0;
        assert!(m.params()[..32 * 16].iter().all(|p| p.abs() <= bound_in));
        let bound_h = 1.0 / (32f64).sqrt();
        assert!(m.params()[32 * 16 + 32..].iter().all(|p| p.abs() <= bound_h));
    }
}
