//! Matching functions and episodic evaluation for few-shot classification
//! over precomputed clip-feature sequences.
//!
//! A video is a [`FeatureSet`]: an ordered sequence of `n` clip features of
//! dimension `d`. Two videos are compared through their temporal similarity
//! matrix, the grid of cosine similarities between (projected) clip features,
//! and a matching function reduces that matrix to one scalar. Per-class
//! scores are averaged over the shots of an episode (or computed on the
//! joint matrix of all shots) and the query is assigned to the best class.
//!
//! Modules:
//! - [`store`]: feature files, manifests, the synthetic generator and the
//!   episode sampler.
//! - [`projection`]: the projection head (linear, layer norm, l2) and its
//!   analytic gradients.
//! - [`matchers`]: similarity matrices and every matching function.
//! - [`scorer`]: class scores, predictions and parallel evaluation.
//! - [`trainer`]: episodic training with a temperature-scaled softmax.
//! - [`classifier`]: the per-episode linear classifier baseline.
//! - [`verify`]: brute-force oracles used by the `check` command.

pub mod classifier;
pub mod error;
pub mod matchers;
pub mod parallel;
pub mod projection;
pub mod rng;
pub mod scorer;
pub mod store;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use matchers::{Aggregation, MatcherKind, MatcherSpec, SimilarityMatrix, TupleMode};
pub use projection::ProjectionParams;
pub use rng::SeedStream;
pub use scorer::{ClassScores, EpisodeResult, Evaluation};
pub use store::{Episode, FeatureSet, Manifest, SyntheticSpec};
