//! Cosine-distance nearest neighbours: exact scan and a random-projection forest.

pub mod forest;

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{OodError, Result};
use crate::io::{EmbeddingMatrix, Matrix};

pub use forest::RpForestIndex;

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OodError::DimensionMismatch {
            what: "vector",
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 {
        return Err(OodError::ZeroNorm(0));
    }
    if nb == 0.0 {
        return Err(OodError::ZeroNorm(1));
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-normalises `v` in 64-bit precision.
pub fn normalize<T: Copy + Into<f64>>(v: &[T]) -> Option<Vec<f64>> {
    let out: Vec<f64> = v.iter().map(|&x| x.into()).collect();
    let norm = dot(&out, &out).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(out.into_iter().map(|x| x / norm).collect())
}

/// Unit-normalised query vector for the concatenated `[z ; p]` space.
pub fn normalize_concat(z: &[f32], p: &[f32]) -> Option<Vec<f64>> {
    let joined: Vec<f64> = z.iter().chain(p).map(|&x| x as f64).collect();
    normalize(&joined)
}

/// Row-major unit-normalised copies of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVectors {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl UnitVectors {
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::from_rows(m.n_rows(), m.n_cols(), |i| {
            m.row(i).iter().map(|&v| v as f64).collect()
        })
    }

    /// Concatenates each row of `left` with the matching row of `right`.
    pub fn concat(left: &Matrix, right: &Matrix) -> Result<Self> {
        if left.n_rows() != right.n_rows() {
            return Err(OodError::DimensionMismatch {
                what: "row count",
                expected: left.n_rows(),
                found: right.n_rows(),
            });
        }
        Self::from_rows(left.n_rows(), left.n_cols() + right.n_cols(), |i| {
            left.row(i)
                .iter()
                .chain(right.row(i))
                .map(|&v| v as f64)
                .collect()
        })
    }

    fn from_rows(n: usize, dim: usize, row: impl Fn(usize) -> Vec<f64> + Sync) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| normalize(&row(i)).ok_or(OodError::ZeroNorm(i)))
            .collect::<Result<_>>()?;
        Ok(UnitVectors {
            n,
            dim,
            data: rows.concat(),
        })
    }

    pub(crate) fn from_raw(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n.checked_mul(dim) != Some(data.len()) || dim == 0 {
            return Err(OodError::Shape(format!(
                "{n}x{dim} vectors need {} values, got {}",
                n * dim,
                data.len()
            )));
        }
        Ok(UnitVectors { n, dim, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine distance from row `i` to a unit-normalised query, computed as
    /// half the squared Euclidean distance so that duplicates give exactly 0.
    #[inline]
    pub fn distance(&self, i: usize, unit_query: &[f64]) -> f64 {
        let sq: f64 = self
            .row(i)
            .iter()
            .zip(unit_query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (0.5 * sq).clamp(0.0, 2.0)
    }
}

/// K nearest training rows, nearest first; ties go to the lower row index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    /// The first `k` neighbours; valid because the list is fully ordered.
    pub fn truncated(&self, k: usize) -> NeighborList {
        NeighborList {
            indices: self.indices[..k].to_vec(),
            distances: self.distances[..k].to_vec(),
        }
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` best `(distance, index)` pairs in order.
pub(crate) fn select_k(mut scored: Vec<(f64, usize)>, k: usize) -> NeighborList {
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance_then_index);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_distance_then_index);
    let (distances, indices) = scored.into_iter().unzip();
    NeighborList { indices, distances }
}

pub(crate) fn check_k(k: usize, n_train: usize) -> Result<()> {
    if k == 0 {
        return Err(OodError::InvalidParameter("K must be at least 1".into()));
    }
    if k > n_train {
        return Err(OodError::KExceedsTrainingSize { k, n_train });
    }
    Ok(())
}

/// Brute-force scan over every row of `space`.
pub fn exact_search(space: &UnitVectors, unit_query: &[f64], k: usize) -> Result<NeighborList> {
    check_k(k, space.len())?;
    if unit_query.len() != space.dim() {
        return Err(OodError::DimensionMismatch {
            what: "query",
            expected: space.dim(),
            found: unit_query.len(),
        });
    }
    let scored = (0..space.len())
        .map(|i| (space.distance(i, unit_query), i))
        .collect();
    Ok(select_k(scored, k))
}

/// Exact K nearest neighbours of `query` among the rows of `train`.
pub fn exact_knn(train: &EmbeddingMatrix, query: &[f32], k: usize) -> Result<NeighborList> {
    check_k(k, train.n_rows())?;
    if query.len() != train.dim() {
        return Err(OodError::DimensionMismatch {
            what: "embedding",
            expected: train.dim(),
            found: query.len(),
        });
    }
    let q = normalize(query).ok_or(OodError::ZeroNorm(0))?;
    let space = UnitVectors::from_matrix(train)?;
    exact_search(&space, &q, k)
}
