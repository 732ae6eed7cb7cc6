//! Feature analysis for deciding whether an MDP formulation is worth
//! attacking with reinforcement learning.
//!
//! Random-policy transitions are used to train ensembles of
//! mixture-density world models. Perturbation probes on those models test
//! whether some state features predict reward and whether any of those
//! respond to actions.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod mdn;
pub mod pipeline;
pub mod plot;
pub mod rng;

pub use analysis::{
    action_sensitivity, analyze, decide_verdict, offset_sensitivity, percentile_significance,
    reward_contribution, significance, train_ensemble, AnalysisSettings, Ensemble,
    FeatureAnalysis, Level, Outcome, PercentileConvention, SignificanceReport, StatKind,
    StatPopulation, Verdict, WorldModel,
};
pub use config::{Overrides, RunConfig};
pub use dataset::{Dataset, MiniBatch};
pub use env::{expected_significance, make_env, Env, EnvSpec, ExpectedPattern};
pub use error::{Error, Result};
pub use mdn::{ModelConfig, ModelParams, MdnOutput};
