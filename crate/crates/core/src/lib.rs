//! Out-of-distribution scoring for text classifiers: feature-space and
//! confidence-based detectors, score normalization and fusion, evaluation
//! metrics and a binary datastore for features, logits, scores and models.

pub mod data;
pub mod datastore;
pub mod detectors;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod linalg;
pub mod metrics;
pub mod synthbench;

pub use data::{
    CalibrationState, FeatureKind, FeatureSet, LogitSet, SampleId, ScoreVector, Split,
    TokenLogProbSet,
};
pub use error::{OodError, Result};
pub use fusion::{
    calibrate, ensemble_sum, feature_fuse, fuse, gnome, Aggregator, CalibrationStats,
    FeatureFusion, FusedScore, Normalization,
};
pub use gaussian::GaussianModel;
pub use linalg::{Cholesky, Flagged, Matrix, Vector};
pub use metrics::{auroc, far95, Decision, EvalReport, Far95, ThresholdDetector};
