//! Out-of-distribution scores from a classifier's embeddings and predicted
//! probabilities, with an AUROC benchmark harness.
//!
//! Every scorer returns a [`ScoreVector`] where larger means more OOD.

pub mod detector;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod iforest;
pub mod io;
pub mod knn;
pub mod knn_scores;
pub mod predictive;
pub mod seed;

pub use detector::{DetectorParams, FittedDetector};
pub use error::{OodError, Result};
pub use eval::{auroc, run_benchmark, EvalReport};
pub use gaussian::GaussianModel;
pub use iforest::IsolationForestModel;
pub use io::{DatasetBundle, EmbeddingMatrix, LabelVector, Method, ProbabilityMatrix, RunConfig, ScoreVector};
pub use knn::{cosine_distance, exact_knn, NeighborList, RpForestIndex};
pub use knn_scores::{KnnIndexModel, KnnParams};
pub use predictive::{entropy_score, msp_score, PredictiveModel};
