//! # preflab-core
//!
//! A desk-scale preference-optimization laboratory: a minimal reverse-mode
//! autodiff engine, a tiny autoregressive token model, synthetic
//! entangled-trajectory preference datasets, a zoo of preference losses
//! (SFT, DPO, DPOP, KTO, RPO, SimPER) with their gradient-coefficient
//! decompositions, future-policy-aware (FPA) regularization via logit
//! extrapolation, a deterministic AdamW training loop, and the measurement
//! apparatus for gradient-entanglement diagnostics.
//!
//! The numeric core is generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); the aliases below pin the crate's default `f64`
//! instantiation, which every tolerance in the test suite assumes.

pub mod check;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod fpa;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar precision of the laboratory.
pub type Scalar = f64;

/// Differentiable array value at default precision.
pub type Value = graph::Value<Scalar>;
/// Recording graph at default precision.
pub type Graph = graph::Graph<Scalar>;
/// Plain dense array at default precision.
pub type Tensor = tensor::Tensor<Scalar>;
/// Trainable policy at default precision.
pub type TinyLm = model::TinyLm<Scalar>;
/// Frozen reference policy at default precision.
pub type FrozenReference = model::FrozenReference<Scalar>;
/// Preference pair at default precision.
pub type PreferencePair = data::PreferencePair<Scalar>;
/// Train/validation split at default precision.
pub type DatasetSplit = data::DatasetSplit<Scalar>;
/// Per-pair scores at default precision.
pub type PairScore = objectives::PairScore<Scalar>;
/// Gradient-coefficient pair at default precision.
pub type CoefficientPair = objectives::CoefficientPair<Scalar>;
/// Loss hyperparameters at default precision.
pub type HyperParams = objectives::HyperParams<Scalar>;
/// FPA settings at default precision.
pub type FpaConfig = fpa::FpaConfig<Scalar>;
/// Scored pair with future log-probs at default precision.
pub type FpaScoredPair = fpa::FpaScoredPair<Scalar>;
/// Adam moments at default precision.
pub type OptimizerState = train::OptimizerState<Scalar>;
/// Finished-run bundle at default precision.
pub type TrainOutcome = train::TrainOutcome<Scalar>;

#[cfg(test)]
mod tests {
    //! The generic core must instantiate at f32 as well; the laboratory's
    //! tolerances all assume the f64 aliases.

    use crate::model::{LmConfig, TinyLm};
    use crate::objectives::{simper_loss, PairScore};

    #[test]
    fn f32_instantiation_smoke() {
        let model = TinyLm::<f32>::init(LmConfig::new(8, 16, 4), 1);
        let graph = crate::graph::Graph::<f32>::new();
        let bound = model.bind(&graph);
        let lp_w = bound.sequence_logprob(&[0, 1], &[2, 3]).unwrap();
        let lp_l = bound.sequence_logprob(&[0, 1], &[2, 4]).unwrap();
        let batch = [PairScore {
            policy_w: lp_w,
            policy_l: lp_l,
            reference_w: -2.0f32,
            reference_l: -2.0,
            len_w: 2,
            len_l: 2,
        }];
        let loss = simper_loss(&batch).unwrap();
        loss.backward().unwrap();
        assert!(loss.item().is_finite());
    }
}
