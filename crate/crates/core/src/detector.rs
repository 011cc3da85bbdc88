//! One fitted scorer per method, with a directory-based save format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::gaussian::GaussianModel;
use crate::iforest::IsolationForestModel;
use crate::io::config::{GaussianConfig, IsolationForestConfig, KnnConfig};
use crate::io::{
    read_embeddings, read_probabilities, write_matrix, DatasetBundle, EmbeddingMatrix, KnnMode,
    Method, ProbabilityMatrix, ScoreVector, TestSplit,
};
use crate::knn::RpForestIndex;
use crate::knn_scores::{KnnIndexModel, KnnParams, SearchSpace};
use crate::predictive::PredictiveModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "model.json";
const TRAIN_EMBEDDINGS: &str = "train_embeddings.oodm";
const TRAIN_PROBS: &str = "train_probs.oodm";
const EMBEDDING_INDEX: &str = "embedding_index.oodi";
const CONCAT_INDEX: &str = "concat_index.oodi";
const GAUSSIAN_FILE: &str = "gaussian.oodg";
const IFOREST_FILE: &str = "iforest.oodf";

/// Hyperparameters for every method, as found in a run configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorParams {
    pub knn: KnnConfig,
    pub gaussian: GaussianConfig,
    pub iforest: IsolationForestConfig,
    pub seed: u64,
}

impl DetectorParams {
    fn knn_params(&self) -> KnnParams {
        KnnParams {
            mode: self.knn.mode,
            n_trees: self.knn.n_trees,
            leaf_capacity: self.knn.leaf_capacity,
            search_budget: self.knn.search_budget,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedDetector {
    Msp(PredictiveModel),
    Entropy(PredictiveModel),
    Mahalanobis(GaussianModel),
    Rmd(GaussianModel),
    IsolationForest(IsolationForestModel),
    Knn { method: Method, model: KnnIndexModel },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knn: Option<KnnParams>,
}

fn missing(method: Method, what: &'static str) -> OodError {
    OodError::MissingInput {
        method: method.id().into(),
        what,
    }
}

impl FittedDetector {
    /// Fits `method` on the training part of `bundle`. KNN models are fitted
    /// for the smallest configured K; other K values are scored through
    /// [`score_ks`](Self::score_ks).
    pub fn fit(method: Method, bundle: &DatasetBundle, params: &DetectorParams) -> Result<Self> {
        bundle.check_method(method)?;
        let train = &bundle.train_embeddings;
        let labels = || bundle.train_labels.as_ref().ok_or(missing(method, "labels"));
        let n_classes = || bundle.n_classes.ok_or(missing(method, "probabilities"));
        Ok(match method {
            Method::Msp => FittedDetector::Msp(PredictiveModel::new(n_classes()?)?),
            Method::Entropy => FittedDetector::Entropy(PredictiveModel::new(n_classes()?)?),
            Method::Mahalanobis => FittedDetector::Mahalanobis(GaussianModel::fit(
                train,
                labels()?,
                params.gaussian.ridge_scale,
            )?),
            Method::Rmd => {
                FittedDetector::Rmd(GaussianModel::fit(train, labels()?, params.gaussian.ridge_scale)?)
            }
            Method::IsolationForest => FittedDetector::IsolationForest(IsolationForestModel::fit(
                train,
                params.iforest.n_trees,
                params.iforest.psi,
                params.seed,
            )?),
            Method::KnnDistance | Method::KnnDistpred | Method::KnnPrediction => {
                let k = params.knn.k.values().first().copied().unwrap_or(10);
                let probs = match method {
                    Method::KnnDistance => None,
                    _ => Some(bundle.train_probs.as_ref().ok_or(missing(method, "training probabilities"))?),
                };
                let model = KnnIndexModel::fit_with(
                    train,
                    probs,
                    k,
                    params.knn_params(),
                    method == Method::KnnDistpred,
                )?;
                FittedDetector::Knn { method, model }
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            FittedDetector::Msp(_) => Method::Msp,
            FittedDetector::Entropy(_) => Method::Entropy,
            FittedDetector::Mahalanobis(_) => Method::Mahalanobis,
            FittedDetector::Rmd(_) => Method::Rmd,
            FittedDetector::IsolationForest(_) => Method::IsolationForest,
            FittedDetector::Knn { method, .. } => *method,
        }
    }

    pub fn score(&self, embeddings: &EmbeddingMatrix, probs: Option<&ProbabilityMatrix>) -> Result<ScoreVector> {
        let method = self.method();
        let probs = || probs.ok_or(missing(method, "test probabilities"));
        match self {
            FittedDetector::Msp(m) => m.msp(probs()?),
            FittedDetector::Entropy(m) => m.entropy(probs()?),
            FittedDetector::Mahalanobis(m) => m.mahalanobis_score(embeddings),
            FittedDetector::Rmd(m) => m.rmd_score(embeddings),
            FittedDetector::IsolationForest(m) => m.score(embeddings),
            FittedDetector::Knn { model, .. } => Ok(self.score_ks_inner(model, embeddings, probs, &[model.k()])?.remove(0)),
        }
    }

    pub fn score_split(&self, split: &TestSplit) -> Result<ScoreVector> {
        self.score(&split.embeddings, split.probs.as_ref())
    }

    /// KNN scores for each K in `ks`, in ascending K order.
    pub fn score_ks(&self, split: &TestSplit, ks: &[usize]) -> Result<Vec<ScoreVector>> {
        let method = self.method();
        match self {
            FittedDetector::Knn { model, .. } => {
                let probs = || split.probs.as_ref().ok_or(missing(method, "test probabilities"));
                self.score_ks_inner(model, &split.embeddings, probs, ks)
            }
            _ => Err(OodError::InvalidParameter(format!("method {method} has no K"))),
        }
    }

    fn score_ks_inner<'a>(
        &self,
        model: &KnnIndexModel,
        embeddings: &EmbeddingMatrix,
        probs: impl Fn() -> Result<&'a ProbabilityMatrix>,
        ks: &[usize],
    ) -> Result<Vec<ScoreVector>> {
        match self.method() {
            Method::KnnDistance => model.knn_distance_scores(embeddings, ks),
            Method::KnnDistpred => model.knn_distpred_scores(embeddings, probs()?, ks),
            _ => model.knn_prediction_scores(embeddings, probs()?, ks),
        }
    }

    /// Ridge actually applied, for the Gaussian methods.
    pub fn ridge(&self) -> Option<f64> {
        match self {
            FittedDetector::Mahalanobis(m) | FittedDetector::Rmd(m) => Some(m.ridge()),
            _ => None,
        }
    }

    /// Writes `model.json` plus the method's binary files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))?;
        let mut manifest = Manifest {
            format_version: MODEL_FORMAT_VERSION,
            method: self.method(),
            n_classes: None,
            k: None,
            knn: None,
        };
        match self {
            FittedDetector::Msp(m) | FittedDetector::Entropy(m) => manifest.n_classes = Some(m.n_classes()),
            FittedDetector::Mahalanobis(m) | FittedDetector::Rmd(m) => m.save(dir.join(GAUSSIAN_FILE))?,
            FittedDetector::IsolationForest(m) => m.save(dir.join(IFOREST_FILE))?,
            FittedDetector::Knn { model, .. } => {
                manifest.k = Some(model.k());
                manifest.knn = Some(model.params().clone());
                write_matrix(dir.join(TRAIN_EMBEDDINGS), model.train_embeddings())?;
                if let Some(p) = model.train_probs() {
                    manifest.n_classes = Some(p.n_classes());
                    write_matrix(dir.join(TRAIN_PROBS), p)?;
                }
                if let SearchSpace::Forest(f) = model.embedding_space() {
                    f.save(dir.join(EMBEDDING_INDEX))?;
                }
                if let Some(SearchSpace::Forest(f)) = model.concat_space() {
                    f.save(dir.join(CONCAT_INDEX))?;
                }
            }
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| OodError::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| OodError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| OodError::Config(format!("{}: {e}", path.display())))?;
        if manifest.format_version != MODEL_FORMAT_VERSION {
            return Err(OodError::UnsupportedVersion(manifest.format_version));
        }
        let method = manifest.method;
        let n_classes = || {
            manifest
                .n_classes
                .ok_or_else(|| OodError::Config("model.json lacks n_classes".into()))
        };
        Ok(match method {
            Method::Msp => FittedDetector::Msp(PredictiveModel::new(n_classes()?)?),
            Method::Entropy => FittedDetector::Entropy(PredictiveModel::new(n_classes()?)?),
            Method::Mahalanobis => FittedDetector::Mahalanobis(GaussianModel::load(dir.join(GAUSSIAN_FILE))?),
            Method::Rmd => FittedDetector::Rmd(GaussianModel::load(dir.join(GAUSSIAN_FILE))?),
            Method::IsolationForest => {
                FittedDetector::IsolationForest(IsolationForestModel::load(dir.join(IFOREST_FILE))?)
            }
            Method::KnnDistance | Method::KnnDistpred | Method::KnnPrediction => {
                let (Some(k), Some(params)) = (manifest.k, manifest.knn.clone()) else {
                    return Err(OodError::Config("model.json lacks KNN parameters".into()));
                };
                let train = read_embeddings(dir.join(TRAIN_EMBEDDINGS))?;
                let probs = match method {
                    Method::KnnDistance => None,
                    _ => Some(read_probabilities(dir.join(TRAIN_PROBS))?),
                };
                let concat = method == Method::KnnDistpred;
                let (emb_index, concat_index) = match params.mode {
                    KnnMode::Exact => (None, None),
                    KnnMode::Approximate => (
                        Some(RpForestIndex::load(dir.join(EMBEDDING_INDEX))?),
                        concat
                            .then(|| RpForestIndex::load(dir.join(CONCAT_INDEX)))
                            .transpose()?,
                    ),
                };
                let model =
                    KnnIndexModel::from_parts(k, params, train, probs, emb_index, concat_index, concat)?;
                FittedDetector::Knn { method, model }
            }
        })
    }
}
