//! Simulation laboratory for counterfactual and online learning to rank.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataset`]: LETOR/SVMrank corpora, synthetic corpus generation, feature scaling.
//! - [`clicksim`]: affine click model with position, item-selection and trust bias.
//! - [`policy`]: linear and MLP scoring models inducing Plackett-Luce ranking policies.
//! - [`metrics`]: DCG metric weights, expected reward and NDCG.
//! - [`estimators`]: click-debiasing corrections (IPS, policy-aware, affine,
//!   intervention-oblivious, intervention-aware) and the estimated reward.
//! - [`optimizer`]: Monte-Carlo policy gradients with validation early stopping.
//! - [`experiment`]: the gather/intervene/re-optimize loop and result summaries.

pub mod clicksim;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod optimizer;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
