//! JSON run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};

/// Every scoring method, declared in canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Msp,
    Entropy,
    Mahalanobis,
    Rmd,
    #[serde(alias = "iforest")]
    IsolationForest,
    KnnDistance,
    KnnDistpred,
    KnnPrediction,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Msp,
        Method::Entropy,
        Method::Mahalanobis,
        Method::Rmd,
        Method::IsolationForest,
        Method::KnnDistance,
        Method::KnnDistpred,
        Method::KnnPrediction,
    ];

    /// Identifier used in configs and on the command line.
    pub fn id(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::Entropy => "entropy",
            Method::Mahalanobis => "mahalanobis",
            Method::Rmd => "rmd",
            Method::IsolationForest => "isolation_forest",
            Method::KnnDistance => "knn_distance",
            Method::KnnDistpred => "knn_distpred",
            Method::KnnPrediction => "knn_prediction",
        }
    }

    /// Column title used in rendered reports.
    pub fn title(self) -> &'static str {
        match self {
            Method::Msp => "MSP",
            Method::Entropy => "Entropy",
            Method::Mahalanobis => "Mahalanobis",
            Method::Rmd => "RMD",
            Method::IsolationForest => "Isolation Forest",
            Method::KnnDistance => "KNN Distance",
            Method::KnnDistpred => "KNN DistPred",
            Method::KnnPrediction => "KNN Prediction",
        }
    }

    pub fn is_knn(self) -> bool {
        matches!(
            self,
            Method::KnnDistance | Method::KnnDistpred | Method::KnnPrediction
        )
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, Method::Mahalanobis | Method::Rmd)
    }

    pub fn needs_train_probs(self) -> bool {
        matches!(self, Method::KnnDistpred | Method::KnnPrediction)
    }

    pub fn needs_test_probs(self) -> bool {
        matches!(
            self,
            Method::Msp | Method::Entropy | Method::KnnDistpred | Method::KnnPrediction
        )
    }

    pub fn parse(s: &str) -> Result<Method> {
        let normalized = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        if normalized == "iforest" {
            return Ok(Method::IsolationForest);
        }
        Method::ALL
            .into_iter()
            .find(|m| m.id() == normalized)
            .ok_or_else(|| OodError::Config(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnMode {
    #[default]
    Exact,
    Approximate,
}

/// One K or a sweep of K values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KValues {
    One(usize),
    Many(Vec<usize>),
}

impl KValues {
    /// Sorted, de-duplicated K values.
    pub fn values(&self) -> Vec<usize> {
        let mut ks = match self {
            KValues::One(k) => vec![*k],
            KValues::Many(ks) => ks.clone(),
        };
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

impl Default for KValues {
    fn default() -> Self {
        KValues::One(10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: KValues,
    pub mode: KnnMode,
    pub n_trees: usize,
    pub leaf_capacity: usize,
    /// Candidate budget; `None` means `n_trees * K * 10`.
    pub search_budget: Option<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: KValues::default(),
            mode: KnnMode::Exact,
            n_trees: crate::knn::forest::DEFAULT_N_TREES,
            leaf_capacity: crate::knn::forest::DEFAULT_LEAF_CAPACITY,
            search_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianConfig {
    pub ridge_scale: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            ridge_scale: crate::gaussian::DEFAULT_RIDGE_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    pub psi: usize,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        IsolationForestConfig {
            n_trees: crate::iforest::DEFAULT_N_TREES,
            psi: crate::iforest::DEFAULT_PSI,
        }
    }
}

/// Input files for one in-distribution/OOD orientation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub train_embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_probs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    pub test_in_embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_in_probs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ood_embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ood_probs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
}

impl DatasetFiles {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_embeddings);
        fix(&mut self.test_in_embeddings);
        for p in [
            &mut self.train_probs,
            &mut self.train_labels,
            &mut self.test_in_probs,
            &mut self.test_ood_embeddings,
            &mut self.test_ood_probs,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

const FILE_KEYS: &[&str] = &[
    "train_embeddings",
    "train_probs",
    "train_labels",
    "test_in_embeddings",
    "test_in_probs",
    "test_ood_embeddings",
    "test_ood_probs",
    "n_classes",
];

const RUN_KEYS: &[&str] = &[
    "in_name",
    "ood_name",
    "methods",
    "knn",
    "gaussian",
    "iforest",
    "seed",
    "output_dir",
    "reverse",
];

// `flatten` and `deny_unknown_fields` do not compose in serde, so unknown keys
// are rejected here instead.
fn check_keys(value: &serde_json::Value, extra: &[&str], what: &str) -> Result<()> {
    let Some(obj) = value.as_object() else {
        return Err(OodError::Config(format!("{what} must be a JSON object")));
    };
    for key in obj.keys() {
        if !FILE_KEYS.contains(&key.as_str()) && !extra.contains(&key.as_str()) {
            return Err(OodError::Config(format!("unknown key {key:?} in {what}")));
        }
    }
    Ok(())
}

fn default_in_name() -> String {
    "in".into()
}

fn default_ood_name() -> String {
    "ood".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_in_name")]
    pub in_name: String,
    #[serde(default = "default_ood_name")]
    pub ood_name: String,
    #[serde(flatten)]
    pub files: DatasetFiles,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub knn: KnnConfig,
    #[serde(default)]
    pub gaussian: GaussianConfig,
    #[serde(default)]
    pub iforest: IsolationForestConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Files for the swapped orientation (the OOD dataset's own model and splits).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse: Option<DatasetFiles>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| OodError::Config(e.to_string()))?;
        check_keys(&value, RUN_KEYS, "run configuration")?;
        if let Some(rev) = value.get("reverse") {
            check_keys(rev, FILE_KEYS, "reverse")?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| OodError::Config(e.to_string()))?;
        cfg.validate()?;
        cfg.methods.sort();
        cfg.methods.dedup();
        Ok(cfg)
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OodError::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.files.resolve(base);
        if let Some(rev) = cfg.reverse.as_mut() {
            rev.resolve(base);
        }
        if let Some(out) = cfg.output_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(OodError::Config("no methods requested".into()));
        }
        let ks = self.knn.k.values();
        if ks.is_empty() || ks.contains(&0) {
            return Err(OodError::Config("knn.k must contain positive values".into()));
        }
        if self.knn.n_trees == 0 || self.knn.leaf_capacity < 2 {
            return Err(OodError::Config(
                "knn.n_trees must be >= 1 and knn.leaf_capacity >= 2".into(),
            ));
        }
        if !(self.gaussian.ridge_scale > 0.0 && self.gaussian.ridge_scale.is_finite()) {
            return Err(OodError::Config("gaussian.ridge_scale must be positive".into()));
        }
        if self.iforest.n_trees == 0 || self.iforest.psi < 2 {
            return Err(OodError::Config(
                "iforest.n_trees must be >= 1 and iforest.psi >= 2".into(),
            ));
        }
        Ok(())
    }
}
