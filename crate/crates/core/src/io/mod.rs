//! Matrix, label and score files; run configuration; dataset bundles.

pub mod bundle;
pub mod config;
pub mod container;
pub mod format;
pub mod matrix;

pub use bundle::{load_bundle, load_files, DatasetBundle, TestSplit};
pub use config::{KnnMode, Method, RunConfig};
pub use format::{
    read_embeddings, read_labels, read_matrix, read_probabilities, read_scores, write_labels,
    write_matrix, write_scores_csv, StoredMatrix,
};
pub use matrix::{EmbeddingMatrix, LabelVector, Matrix, ProbabilityMatrix, ScoreVector};
