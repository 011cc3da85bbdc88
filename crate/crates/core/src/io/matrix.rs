//! Validated in-memory matrices for embeddings, probabilities, labels and scores.

use crate::error::{OodError, Result};

/// Tolerance on probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Dense row-major `f32` matrix with finite entries and non-zero shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f32>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(OodError::Shape(format!(
                "matrix must be at least 1x1, got {n_rows}x{n_cols}"
            )));
        }
        let expected = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| OodError::Shape(format!("{n_rows}x{n_cols} overflows")))?;
        if data.len() != expected {
            return Err(OodError::Shape(format!(
                "{n_rows}x{n_cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OodError::NonFinite {
                row: pos / n_cols,
                col: pos % n_cols,
            });
        }
        Ok(Matrix {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(OodError::Shape(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.n_cols)
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.n_cols, data)
    }
}

/// Penultimate-layer representations, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Matrix::new(n_rows, dim, data).map(EmbeddingMatrix)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        Matrix::from_rows(rows).map(EmbeddingMatrix)
    }

    pub fn dim(&self) -> usize {
        self.0.n_cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl From<Matrix> for EmbeddingMatrix {
    fn from(m: Matrix) -> Self {
        EmbeddingMatrix(m)
    }
}

impl std::ops::Deref for EmbeddingMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Predicted class probabilities; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix(Matrix);

impl ProbabilityMatrix {
    pub fn new(n_rows: usize, n_classes: usize, data: Vec<f32>) -> Result<Self> {
        Self::try_from(Matrix::new(n_rows, n_classes, data)?)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        Self::try_from(Matrix::from_rows(rows)?)
    }

    pub fn n_classes(&self) -> usize {
        self.0.n_cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl TryFrom<Matrix> for ProbabilityMatrix {
    type Error = OodError;

    fn try_from(m: Matrix) -> Result<Self> {
        if m.n_cols() < 2 {
            return Err(OodError::Shape(format!(
                "probability matrix needs at least 2 classes, got {}",
                m.n_cols()
            )));
        }
        for (i, row) in m.rows().enumerate() {
            if let Some(&v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(OodError::InvalidProbability {
                    row: i,
                    reason: format!("entry {v} outside [0, 1]"),
                });
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(OodError::InvalidProbability {
                    row: i,
                    reason: format!("row sums to {sum}"),
                });
            }
        }
        Ok(ProbabilityMatrix(m))
    }
}

impl std::ops::Deref for ProbabilityMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Integer class labels for training rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(OodError::Empty("label vector".into()));
        }
        if let Some((row, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= n_classes)
        {
            return Err(OodError::LabelOutOfRange {
                row,
                label: label as i64,
                n_classes,
            });
        }
        Ok(LabelVector { labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// OOD scores, one per row. Larger means more out-of-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(OodError::Empty("score vector".into()));
        }
        if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
            return Err(OodError::NonFinite { row, col: 0 });
        }
        Ok(ScoreVector(scores))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ScoreVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}
