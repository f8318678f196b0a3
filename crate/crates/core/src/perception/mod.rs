//! Feature extraction, marker tracking and the learners behind the evaluation tasks.

pub mod features;
pub mod learn;
pub mod tracking;

pub use features::{FeatureConfig, FeatureExtractor, FeatureVector, MarkerHandling, RestReference, GRID};
pub use learn::{KnnClassifier, RidgeRegressor, Standardizer};
pub use tracking::{hungarian, track_markers, DisplacementField, MarkerMatch};
