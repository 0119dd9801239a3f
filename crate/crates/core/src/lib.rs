//! A numerical laboratory for tempered Laplace posteriors over small
//! neural networks.
//!
//! The pipeline: train MLPs to MAP estimates of a Gaussian-prior
//! regularized NLL ([`train`]), summarize the curvature at the mode with
//! the generalized Gauss–Newton trace or per-layer Kronecker factors and
//! fit temperature-scaled Gaussian posteriors ([`laplace`]), evaluate
//! Monte-Carlo posterior predictives on the zero-one/NLL/ECE triple
//! ([`metrics`]), and certify out-of-sample risk with PAC-Bayes bounds —
//! Catoni, Alquier, and a closed-form bound for a linearized synthetic
//! world with its own Monte-Carlo risk oracle ([`bounds`], [`world`]).
//!
//! All randomness is explicit: every sampling entry point takes a seed and
//! identical seeds give identical results. Types are immutable after
//! construction and safe to share across threads.

pub mod bounds;
pub mod data;
pub mod error;
pub mod laplace;
pub mod metrics;
pub mod nn;
pub mod store;
pub mod train;
pub mod world;

pub use bounds::{alquier_bound, catoni_bound, evaluate_bound_pipeline, BoundKind, BoundReport};
pub use data::{gaussian_blobs, split_three, two_spirals, BlobsSpec, Dataset, Targets};
pub use error::{Error, Result};
pub use laplace::{
    fit_tempered_posterior, gaussian_kl, ggn_trace, kfac_factors, sample_weights,
    select_prior_variance, CurvatureSummary, FitKind, TemperedPosterior,
};
pub use metrics::{evaluate, posterior_predictive, predictive_relative_entropy, MetricTriple, PredictiveResult};
pub use nn::{
    forward, grad_loss, loss, per_sample_jacobian, Activation, LossKind, MlpArchitecture,
    ModelParams, OutputHead, Target,
};
pub use train::{seed_farm, train_map, MapEstimate, TrainConfig};
pub use world::{
    generate_world_data, mc_true_risk, proposition_bound, MixtureComponent, SyntheticWorld,
    WorldData,
};
