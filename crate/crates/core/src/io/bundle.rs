//! Loading and cross-checking the files named by a run configuration.

use crate::error::{OodError, Result};
use crate::io::config::{DatasetFiles, Method, RunConfig};
use crate::io::format::{infer_n_classes, read_embeddings, read_labels, read_probabilities};
use crate::io::matrix::{EmbeddingMatrix, LabelVector, ProbabilityMatrix};

/// Embeddings (and optionally probabilities) for one test set.
#[derive(Debug, Clone)]
pub struct TestSplit {
    pub embeddings: EmbeddingMatrix,
    pub probs: Option<ProbabilityMatrix>,
}

impl TestSplit {
    pub fn len(&self) -> usize {
        self.embeddings.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train_embeddings: EmbeddingMatrix,
    pub train_probs: Option<ProbabilityMatrix>,
    pub train_labels: Option<LabelVector>,
    pub test_in: TestSplit,
    pub test_ood: Option<TestSplit>,
    pub n_classes: Option<usize>,
}

impl DatasetBundle {
    /// Checks dimensions, row counts and class counts across all parts.
    pub fn validate(&self) -> Result<()> {
        let d = self.train_embeddings.dim();
        let n_train = self.train_embeddings.n_rows();
        let splits = std::iter::once(&self.test_in).chain(self.test_ood.as_ref());
        for split in splits {
            if split.embeddings.dim() != d {
                return Err(OodError::DimensionMismatch {
                    what: "embedding",
                    expected: d,
                    found: split.embeddings.dim(),
                });
            }
            if let Some(p) = &split.probs {
                if p.n_rows() != split.len() {
                    return Err(OodError::DimensionMismatch {
                        what: "test probability row count",
                        expected: split.len(),
                        found: p.n_rows(),
                    });
                }
            }
        }
        if let Some(p) = &self.train_probs {
            if p.n_rows() != n_train {
                return Err(OodError::DimensionMismatch {
                    what: "train probability row count",
                    expected: n_train,
                    found: p.n_rows(),
                });
            }
        }
        if let Some(l) = &self.train_labels {
            if l.len() != n_train {
                return Err(OodError::DimensionMismatch {
                    what: "label count",
                    expected: n_train,
                    found: l.len(),
                });
            }
        }
        let prob_sets = self
            .train_probs
            .iter()
            .chain(self.test_in.probs.iter())
            .chain(self.test_ood.iter().flat_map(|s| s.probs.iter()));
        if let Some(k) = self.n_classes {
            for p in prob_sets {
                if p.n_classes() != k {
                    return Err(OodError::DimensionMismatch {
                        what: "class",
                        expected: k,
                        found: p.n_classes(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Errors unless every input `method` needs is present.
    pub fn check_method(&self, method: Method) -> Result<()> {
        let missing = |what| {
            Err(OodError::MissingInput {
                method: method.id().into(),
                what,
            })
        };
        if method.needs_labels() && self.train_labels.is_none() {
            return missing("labels");
        }
        if method.needs_train_probs() && self.train_probs.is_none() {
            return missing("training probabilities");
        }
        if method.needs_test_probs() {
            let splits = std::iter::once(&self.test_in).chain(self.test_ood.as_ref());
            for split in splits {
                if split.probs.is_none() {
                    return missing("test probabilities");
                }
            }
        }
        Ok(())
    }
}

fn load_split(
    emb: &std::path::Path,
    probs: Option<&std::path::Path>,
) -> Result<TestSplit> {
    Ok(TestSplit {
        embeddings: read_embeddings(emb)?,
        probs: probs.map(read_probabilities).transpose()?,
    })
}

/// Loads one orientation's files and checks them against `methods`.
pub fn load_files(files: &DatasetFiles, methods: &[Method]) -> Result<DatasetBundle> {
    for &m in methods {
        if m.needs_labels() && files.train_labels.is_none() {
            return Err(OodError::MissingInput {
                method: m.id().into(),
                what: "labels",
            });
        }
    }
    let train_embeddings = read_embeddings(&files.train_embeddings)?;
    let train_probs = files.train_probs.as_deref().map(read_probabilities).transpose()?;
    let test_in = load_split(&files.test_in_embeddings, files.test_in_probs.as_deref())?;
    let test_ood = files
        .test_ood_embeddings
        .as_deref()
        .map(|p| load_split(p, files.test_ood_probs.as_deref()))
        .transpose()?;

    let n_classes = match (files.n_classes, &train_probs, &test_in.probs) {
        (Some(k), _, _) => Some(k),
        (None, Some(p), _) | (None, None, Some(p)) => Some(p.n_classes()),
        (None, None, None) => match &files.train_labels {
            Some(path) => Some(infer_n_classes(path)?),
            None => None,
        },
    };
    let train_labels = match (&files.train_labels, n_classes) {
        (Some(path), Some(k)) => Some(read_labels(path, k)?),
        _ => None,
    };

    let bundle = DatasetBundle {
        train_embeddings,
        train_probs,
        train_labels,
        test_in,
        test_ood,
        n_classes,
    };
    bundle.validate()?;
    for &m in methods {
        bundle.check_method(m)?;
    }
    Ok(bundle)
}

/// Loads the primary orientation named by `config`.
pub fn load_bundle(config: &RunConfig) -> Result<DatasetBundle> {
    load_files(&config.files, &config.methods)
}
