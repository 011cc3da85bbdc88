//! KNN Distance, KNN DistPred and KNN Prediction scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::io::{EmbeddingMatrix, KnnMode, ProbabilityMatrix, ScoreVector};
use crate::knn::forest::{default_search_budget, DEFAULT_LEAF_CAPACITY, DEFAULT_N_TREES};
use crate::knn::{check_k, exact_search, normalize, normalize_concat, NeighborList, RpForestIndex, UnitVectors};
use crate::predictive::LOG_CLAMP;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub mode: KnnMode,
    pub n_trees: usize,
    pub leaf_capacity: usize,
    /// `None` means `n_trees * K * 10`.
    pub search_budget: Option<usize>,
    pub seed: u64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            mode: KnnMode::Exact,
            n_trees: DEFAULT_N_TREES,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            search_budget: None,
            seed: 0,
        }
    }
}

impl KnnParams {
    pub fn approximate(seed: u64) -> Self {
        KnnParams {
            mode: KnnMode::Approximate,
            seed,
            ..KnnParams::default()
        }
    }
}

/// Training vectors searched either by full scan or through a forest.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchSpace {
    Exact(UnitVectors),
    Forest(RpForestIndex),
}

impl SearchSpace {
    fn new(vectors: UnitVectors, params: &KnnParams, seed: u64) -> Result<Self> {
        Ok(match params.mode {
            KnnMode::Exact => SearchSpace::Exact(vectors),
            KnnMode::Approximate => SearchSpace::Forest(RpForestIndex::build_from_vectors(
                vectors,
                params.n_trees,
                params.leaf_capacity,
                seed,
            )?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            SearchSpace::Exact(v) => v.len(),
            SearchSpace::Forest(f) => f.n_items(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            SearchSpace::Exact(v) => v.dim(),
            SearchSpace::Forest(f) => f.dim(),
        }
    }

    pub fn search(&self, unit_query: &[f64], k: usize, budget: Option<usize>) -> Result<NeighborList> {
        match self {
            SearchSpace::Exact(v) => exact_search(v, unit_query, k),
            SearchSpace::Forest(f) => {
                let budget = budget.unwrap_or_else(|| default_search_budget(f.n_trees(), k));
                f.query_unit(unit_query, k, budget.max(k))
            }
        }
    }

    /// Neighbour lists for every query and every K in `ks` (sorted ascending).
    /// An exact scan is run once at the largest K and truncated.
    fn search_all(&self, queries: &[Vec<f64>], ks: &[usize], budget: Option<usize>) -> Result<Vec<Vec<NeighborList>>> {
        let k_max = *ks.last().expect("at least one K");
        match self {
            SearchSpace::Exact(_) => {
                let full: Vec<NeighborList> = queries
                    .par_iter()
                    .map(|q| self.search(q, k_max, budget))
                    .collect::<Result<_>>()?;
                Ok(ks
                    .iter()
                    .map(|&k| full.iter().map(|nl| nl.truncated(k)).collect())
                    .collect())
            }
            SearchSpace::Forest(_) => ks
                .iter()
                .map(|&k| queries.par_iter().map(|q| self.search(q, k, budget)).collect())
                .collect(),
        }
    }
}

/// Fitted state shared by the three KNN scorers.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndexModel {
    k: usize,
    params: KnnParams,
    train_embeddings: EmbeddingMatrix,
    train_probs: Option<ProbabilityMatrix>,
    embedding_space: SearchSpace,
    concat_space: Option<SearchSpace>,
}

impl KnnIndexModel {
    /// Indexes the training embeddings, plus the concatenated `[z ; p]`
    /// vectors when training probabilities are given.
    pub fn fit(
        train: &EmbeddingMatrix,
        train_probs: Option<&ProbabilityMatrix>,
        k: usize,
        params: KnnParams,
    ) -> Result<Self> {
        Self::fit_with(train, train_probs, k, params, train_probs.is_some())
    }

    /// As [`fit`](Self::fit), but the concatenated space is only built when
    /// `concat` is set. KNN Prediction needs the probabilities but searches
    /// in embedding space.
    pub fn fit_with(
        train: &EmbeddingMatrix,
        train_probs: Option<&ProbabilityMatrix>,
        k: usize,
        params: KnnParams,
        concat: bool,
    ) -> Result<Self> {
        check_k(k, train.n_rows())?;
        check_probs(train, train_probs)?;
        let embedding_space =
            SearchSpace::new(UnitVectors::from_matrix(train)?, &params, derive_seed(params.seed, 0))?;
        let concat_space = match (concat, train_probs) {
            (true, Some(p)) => Some(SearchSpace::new(
                UnitVectors::concat(train, p)?,
                &params,
                derive_seed(params.seed, 1),
            )?),
            (true, None) => {
                return Err(OodError::MissingInput {
                    method: "knn_distpred".into(),
                    what: "training probabilities",
                })
            }
            (false, _) => None,
        };
        Ok(KnnIndexModel {
            k,
            params,
            train_embeddings: train.clone(),
            train_probs: train_probs.cloned(),
            embedding_space,
            concat_space,
        })
    }

    /// Reassembles a model around previously built forests. In exact mode the
    /// search spaces are rebuilt from the embeddings.
    pub fn from_parts(
        k: usize,
        params: KnnParams,
        train: EmbeddingMatrix,
        train_probs: Option<ProbabilityMatrix>,
        embedding_index: Option<RpForestIndex>,
        concat_index: Option<RpForestIndex>,
        concat: bool,
    ) -> Result<Self> {
        check_k(k, train.n_rows())?;
        check_probs(&train, train_probs.as_ref())?;
        if params.mode == KnnMode::Exact {
            return Self::fit_with(&train, train_probs.as_ref(), k, params, concat);
        }
        let n = train.n_rows();
        let n_classes = train_probs.as_ref().map_or(0, |p| p.n_classes());
        let embedding_index = embedding_index
            .ok_or_else(|| OodError::Shape("approximate KNN model without an index".into()))?;
        if embedding_index.n_items() != n || embedding_index.dim() != train.dim() {
            return Err(OodError::Shape("embedding index does not match the training data".into()));
        }
        if let Some(c) = &concat_index {
            if train_probs.is_none() || c.n_items() != n || c.dim() != train.dim() + n_classes {
                return Err(OodError::Shape("concatenated index does not match the training data".into()));
            }
        }
        if concat != concat_index.is_some() {
            return Err(OodError::Shape("concatenated index missing or unexpected".into()));
        }
        Ok(KnnIndexModel {
            k,
            params,
            train_embeddings: train,
            train_probs,
            embedding_space: SearchSpace::Forest(embedding_index),
            concat_space: concat_index.map(SearchSpace::Forest),
        })
    }

    pub fn train_embeddings(&self) -> &EmbeddingMatrix {
        &self.train_embeddings
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &KnnParams {
        &self.params
    }

    pub fn n_train(&self) -> usize {
        self.embedding_space.len()
    }

    pub fn dim(&self) -> usize {
        self.embedding_space.dim()
    }

    pub fn embedding_space(&self) -> &SearchSpace {
        &self.embedding_space
    }

    pub fn concat_space(&self) -> Option<&SearchSpace> {
        self.concat_space.as_ref()
    }

    pub fn train_probs(&self) -> Option<&ProbabilityMatrix> {
        self.train_probs.as_ref()
    }

    /// Same fitted state with a different K.
    pub fn with_k(mut self, k: usize) -> Result<Self> {
        check_k(k, self.n_train())?;
        self.k = k;
        Ok(self)
    }

    fn check_ks(&self, ks: &[usize]) -> Result<Vec<usize>> {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(OodError::InvalidParameter("no K values".into()));
        }
        for &k in &ks {
            check_k(k, self.n_train())?;
        }
        Ok(ks)
    }

    fn embedding_queries(&self, test: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        if test.dim() != self.dim() {
            return Err(OodError::DimensionMismatch {
                what: "embedding",
                expected: self.dim(),
                found: test.dim(),
            });
        }
        (0..test.n_rows())
            .into_par_iter()
            .map(|i| normalize(test.row(i)).ok_or(OodError::ZeroNorm(i)))
            .collect()
    }

    fn require_probs(&self, method: &str, test_emb: &EmbeddingMatrix, test_probs: &ProbabilityMatrix) -> Result<&ProbabilityMatrix> {
        let train_probs = self.train_probs.as_ref().ok_or_else(|| OodError::MissingInput {
            method: method.into(),
            what: "training probabilities",
        })?;
        if test_probs.n_classes() != train_probs.n_classes() {
            return Err(OodError::DimensionMismatch {
                what: "class",
                expected: train_probs.n_classes(),
                found: test_probs.n_classes(),
            });
        }
        if test_probs.n_rows() != test_emb.n_rows() {
            return Err(OodError::DimensionMismatch {
                what: "test probability row count",
                expected: test_emb.n_rows(),
                found: test_probs.n_rows(),
            });
        }
        Ok(train_probs)
    }

    /// Neighbours of each test row in embedding space at the model's K.
    pub fn neighbors(&self, test: &EmbeddingMatrix) -> Result<Vec<NeighborList>> {
        let queries = self.embedding_queries(test)?;
        Ok(self
            .embedding_space
            .search_all(&queries, &[self.k], self.params.search_budget)?
            .remove(0))
    }

    pub fn knn_distance_scores(&self, test: &EmbeddingMatrix, ks: &[usize]) -> Result<Vec<ScoreVector>> {
        let ks = self.check_ks(ks)?;
        let queries = self.embedding_queries(test)?;
        self.embedding_space
            .search_all(&queries, &ks, self.params.search_budget)?
            .into_iter()
            .map(|lists| ScoreVector::new(lists.iter().map(NeighborList::mean_distance).collect()))
            .collect()
    }

    pub fn knn_distpred_scores(
        &self,
        test_emb: &EmbeddingMatrix,
        test_probs: &ProbabilityMatrix,
        ks: &[usize],
    ) -> Result<Vec<ScoreVector>> {
        let ks = self.check_ks(ks)?;
        self.require_probs("knn_distpred", test_emb, test_probs)?;
        if test_emb.dim() != self.dim() {
            return Err(OodError::DimensionMismatch {
                what: "embedding",
                expected: self.dim(),
                found: test_emb.dim(),
            });
        }
        let space = self.concat_space.as_ref().ok_or_else(|| OodError::MissingInput {
            method: "knn_distpred".into(),
            what: "training probabilities",
        })?;
        let queries: Vec<Vec<f64>> = (0..test_emb.n_rows())
            .into_par_iter()
            .map(|i| normalize_concat(test_emb.row(i), test_probs.row(i)).ok_or(OodError::ZeroNorm(i)))
            .collect::<Result<_>>()?;
        space
            .search_all(&queries, &ks, self.params.search_budget)?
            .into_iter()
            .map(|lists| ScoreVector::new(lists.iter().map(NeighborList::mean_distance).collect()))
            .collect()
    }

    pub fn knn_prediction_scores(
        &self,
        test_emb: &EmbeddingMatrix,
        test_probs: &ProbabilityMatrix,
        ks: &[usize],
    ) -> Result<Vec<ScoreVector>> {
        let ks = self.check_ks(ks)?;
        let train_probs = self.require_probs("knn_prediction", test_emb, test_probs)?;
        let queries = self.embedding_queries(test_emb)?;
        self.embedding_space
            .search_all(&queries, &ks, self.params.search_budget)?
            .into_iter()
            .map(|lists| {
                let scores = lists
                    .par_iter()
                    .enumerate()
                    .map(|(i, nl)| neighbor_cross_entropy(test_probs.row(i), train_probs, &nl.indices))
                    .collect();
                ScoreVector::new(scores)
            })
            .collect()
    }

    pub fn knn_distance_score(&self, test: &EmbeddingMatrix) -> Result<ScoreVector> {
        Ok(self.knn_distance_scores(test, &[self.k])?.remove(0))
    }

    pub fn knn_distpred_score(&self, test_emb: &EmbeddingMatrix, test_probs: &ProbabilityMatrix) -> Result<ScoreVector> {
        Ok(self.knn_distpred_scores(test_emb, test_probs, &[self.k])?.remove(0))
    }

    pub fn knn_prediction_score(&self, test_emb: &EmbeddingMatrix, test_probs: &ProbabilityMatrix) -> Result<ScoreVector> {
        Ok(self.knn_prediction_scores(test_emb, test_probs, &[self.k])?.remove(0))
    }
}

fn check_probs(train: &EmbeddingMatrix, train_probs: Option<&ProbabilityMatrix>) -> Result<()> {
    match train_probs {
        Some(p) if p.n_rows() != train.n_rows() => Err(OodError::DimensionMismatch {
            what: "train probability row count",
            expected: train.n_rows(),
            found: p.n_rows(),
        }),
        _ => Ok(()),
    }
}

/// `-sum_j p_j ln(max(pbar_j, eps))` where `pbar` averages the neighbours' rows.
pub fn neighbor_cross_entropy(p: &[f32], train_probs: &ProbabilityMatrix, neighbors: &[usize]) -> f64 {
    let mut mean = vec![0.0f64; p.len()];
    for &j in neighbors {
        for (m, &v) in mean.iter_mut().zip(train_probs.row(j)) {
            *m += v as f64;
        }
    }
    let k = neighbors.len() as f64;
    -p.iter()
        .zip(&mean)
        .map(|(&pi, &m)| pi as f64 * (m / k).max(LOG_CLAMP).ln())
        .sum::<f64>()
}
