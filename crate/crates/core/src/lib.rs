//! Preference-inference engine for personalized route choice.
//!
//! The model is a two-level discrete-choice structure: a multinomial-logit
//! layer maps user/context features to attribute weights, and a
//! Plackett–Luce layer turns weighted route values (time, cost, walking
//! time) into choice probabilities over an offer set. On top of it the crate
//! provides:
//!
//! - [`static_fit`]: full-dataset Bayesian fitting with a standard-normal
//!   prior, posterior summaries, and predictive-accuracy evaluation;
//! - [`dynamic`]: nightly sequential updating — residual particle filtering
//!   of the previous posterior, a Gaussian-mixture prior with plug-in
//!   bandwidth, and an age-weighted likelihood over a pruned store;
//! - [`decision`]: clustered route selection, car-pool priority ranking, and
//!   incentive computation/optimization;
//! - [`datagen`]: a synthetic interaction generator that doubles as the
//!   ground-truth oracle for the inference tests;
//! - [`io`]: JSONL dataset/store formats and posterior persistence;
//! - [`experiment`]: the drivers behind the accuracy/trend studies.
//!
//! Sampling is delegated to the workspace NUTS crate
//! ([`routepref_nuts`]); everything else is implemented here.

pub mod choice;
pub mod datagen;
pub mod dataset;
pub mod decision;
pub mod dynamic;
mod error;
pub mod experiment;
pub mod features;
pub mod io;
mod kmeans;
pub mod particles;
pub mod posterior;
pub mod routes;
pub mod scaler;
pub mod static_fit;

pub use choice::{
    choice_odds, choice_probabilities, compute_weights, observation_log_likelihood, route_value,
    ParameterMatrix, RawUnitWeights, WeightVector, PARAM_DIM,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use features::{encode_features, AgeGroup, FeatureVector, RawUserContext, FEATURE_DIM};
pub use particles::ParticleSet;
pub use routes::{Observation, OfferSet, RouteAttributes, DEFAULT_OFFER_SIZE};
pub use routepref_nuts::McmcConfig;
pub use scaler::Scaler;
