//! Class-conditional Gaussian scores: Mahalanobis distance and the relative
//! Mahalanobis distance (RMD).
//!
//! Classes share one pooled covariance; RMD subtracts the distance under a
//! single background Gaussian fitted to all training rows. Both covariances
//! are ridge-regularised and kept only as Cholesky factors, so every distance
//! is a pair of triangular solves.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{OodError, Result};
use crate::io::container::{read_file, ByteReader, ByteWriter};
use crate::io::{EmbeddingMatrix, LabelVector, ScoreVector};

pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;
const MAX_RIDGE_DOUBLINGS: usize = 200;
const GAUSSIAN_MAGIC: &[u8; 4] = b"OODG";

/// In-place Cholesky factorisation of a symmetric `d x d` row-major matrix.
/// On success the lower triangle holds `L` and the upper triangle is zeroed.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for k in j + 1..d {
            a[j * d + k] = 0.0;
        }
    }
    true
}

/// Solves `L x = b` in place for lower-triangular row-major `L`.
pub fn solve_lower_in_place(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let row = &l[i * d..i * d + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * d + i];
    }
}

/// A Cholesky factor of `cov + ridge * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    ridge: f64,
}

impl CholeskyFactor {
    /// Factors `cov + λI`, starting from `λ = ridge_scale * trace / d` and
    /// doubling λ until the factorisation succeeds.
    pub fn regularized(cov: &[f64], dim: usize, ridge_scale: f64) -> Result<Self> {
        if cov.len() != dim * dim || dim == 0 {
            return Err(OodError::Shape(format!("covariance must be {dim}x{dim}")));
        }
        if !(ridge_scale >= 0.0 && ridge_scale.is_finite()) {
            return Err(OodError::InvalidParameter(format!(
                "ridge_scale must be finite and non-negative, got {ridge_scale}"
            )));
        }
        let mean_var = (0..dim).map(|i| cov[i * dim + i]).sum::<f64>() / dim as f64;
        let scale = if mean_var > 0.0 { mean_var } else { 1.0 };
        let mut ridge = ridge_scale * scale;
        for _ in 0..MAX_RIDGE_DOUBLINGS {
            let mut a = cov.to_vec();
            for i in 0..dim {
                a[i * dim + i] += ridge;
            }
            if cholesky_in_place(&mut a, dim) {
                return Ok(CholeskyFactor {
                    dim,
                    lower: a,
                    ridge,
                });
            }
            ridge = if ridge > 0.0 {
                ridge * 2.0
            } else {
                f64::EPSILON * scale
            };
        }
        Err(OodError::Numerical(format!(
            "covariance not positive definite even with ridge {ridge:e}"
        )))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim).map(move |i| self.lower[i * self.dim + i])
    }

    /// `L^{-1} v`.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        solve_lower_in_place(&self.lower, self.dim, &mut out);
        out
    }

    /// Squared Mahalanobis distance `(x - mu)^T (LL^T)^{-1} (x - mu)`.
    pub fn mahalanobis(&self, x: &[f64], mu: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        self.whiten(&diff).iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    dim: usize,
    class_means: Vec<Vec<f64>>,
    shared: CholeskyFactor,
    global_mean: Vec<f64>,
    background: CholeskyFactor,
    // L^{-1} mu_k and L0^{-1} mu_0, cached so a query needs one solve per factor.
    whitened_means: Vec<Vec<f64>>,
    whitened_global_mean: Vec<f64>,
}

/// Mean of the listed rows, accumulated in f64.
fn mean_of(train: &EmbeddingMatrix, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0f64; train.dim()];
    for &i in rows {
        for (a, &v) in acc.iter_mut().zip(train.row(i)) {
            *a += v as f64;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `(1/n) * sum_i (z_i - c_i)(z_i - c_i)^T` where `c_i = centers[group[i]]`.
fn scatter(train: &EmbeddingMatrix, group: &[usize], centers: &[Vec<f64>]) -> Vec<f64> {
    let (n, d) = (train.n_rows(), train.dim());
    // Column-major centred data so every covariance entry is one contiguous dot.
    let mut cols = vec![0.0f64; n * d];
    for i in 0..n {
        let c = &centers[group[i]];
        for (j, &v) in train.row(i).iter().enumerate() {
            cols[j * n + i] = v as f64 - c[j];
        }
    }
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| {
            let ca = &cols[a * n..(a + 1) * n];
            (0..=a)
                .map(|b| {
                    let cb = &cols[b * n..(b + 1) * n];
                    ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / n as f64
                })
                .collect()
        })
        .collect();
    let mut cov = vec![0.0f64; d * d];
    for (a, row) in rows.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

impl GaussianModel {
    /// Fits per-class means, the pooled covariance and the background Gaussian.
    pub fn fit(train: &EmbeddingMatrix, labels: &LabelVector, ridge_scale: f64) -> Result<Self> {
        if labels.len() != train.n_rows() {
            return Err(OodError::DimensionMismatch {
                what: "label count",
                expected: train.n_rows(),
                found: labels.len(),
            });
        }
        let n_classes = labels.n_classes();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &l) in labels.labels().iter().enumerate() {
            members[l as usize].push(i);
        }
        if let Some((class, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 2) {
            return Err(OodError::ClassTooSmall {
                class,
                count: m.len(),
            });
        }
        let class_means: Vec<Vec<f64>> = members.iter().map(|m| mean_of(train, m)).collect();
        let group: Vec<usize> = labels.labels().iter().map(|&l| l as usize).collect();
        let pooled = scatter(train, &group, &class_means);

        let all: Vec<usize> = (0..train.n_rows()).collect();
        let global_mean = mean_of(train, &all);
        let global_cov = scatter(train, &vec![0; train.n_rows()], std::slice::from_ref(&global_mean));

        Self::from_parts(class_means, &pooled, global_mean, &global_cov, ridge_scale)
    }

    /// Builds a model from explicit means and (unregularised) covariances.
    pub fn from_parts(
        class_means: Vec<Vec<f64>>,
        shared_cov: &[f64],
        global_mean: Vec<f64>,
        global_cov: &[f64],
        ridge_scale: f64,
    ) -> Result<Self> {
        let dim = global_mean.len();
        if dim == 0 {
            return Err(OodError::Shape("embedding dimension is 0".into()));
        }
        if class_means.is_empty() {
            return Err(OodError::Shape("no class means".into()));
        }
        if let Some(m) = class_means.iter().find(|m| m.len() != dim) {
            return Err(OodError::DimensionMismatch {
                what: "class mean",
                expected: dim,
                found: m.len(),
            });
        }
        let shared = CholeskyFactor::regularized(shared_cov, dim, ridge_scale)?;
        let background = CholeskyFactor::regularized(global_cov, dim, ridge_scale)?;
        Ok(Self::assemble(dim, class_means, shared, global_mean, background))
    }

    fn assemble(
        dim: usize,
        class_means: Vec<Vec<f64>>,
        shared: CholeskyFactor,
        global_mean: Vec<f64>,
        background: CholeskyFactor,
    ) -> Self {
        let whitened_means = class_means.iter().map(|m| shared.whiten(m)).collect();
        let whitened_global_mean = background.whiten(&global_mean);
        GaussianModel {
            dim,
            class_means,
            shared,
            global_mean,
            background,
            whitened_means,
            whitened_global_mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn class_means(&self) -> &[Vec<f64>] {
        &self.class_means
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }

    pub fn shared_factor(&self) -> &CholeskyFactor {
        &self.shared
    }

    pub fn background_factor(&self) -> &CholeskyFactor {
        &self.background
    }

    /// Ridge added to the pooled covariance.
    pub fn ridge(&self) -> f64 {
        self.shared.ridge()
    }

    /// Ridge added to the background covariance.
    pub fn background_ridge(&self) -> f64 {
        self.background.ridge()
    }

    /// Squared Mahalanobis distance to every class mean.
    pub fn class_distances(&self, z: &[f32]) -> Vec<f64> {
        let x: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let w = self.shared.whiten(&x);
        self.whitened_means
            .iter()
            .map(|m| w.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    }

    /// Squared Mahalanobis distance under the background Gaussian.
    pub fn background_distance(&self, z: &[f32]) -> f64 {
        let x: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let w = self.background.whiten(&x);
        w.iter()
            .zip(&self.whitened_global_mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn check_dim(&self, test: &EmbeddingMatrix) -> Result<()> {
        if test.dim() != self.dim {
            return Err(OodError::DimensionMismatch {
                what: "embedding",
                expected: self.dim,
                found: test.dim(),
            });
        }
        Ok(())
    }

    /// `min_k MD_k(z)` per row.
    pub fn mahalanobis_score(&self, test: &EmbeddingMatrix) -> Result<ScoreVector> {
        self.check_dim(test)?;
        let scores = (0..test.n_rows())
            .into_par_iter()
            .map(|i| {
                self.class_distances(test.row(i))
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        ScoreVector::new(scores)
    }

    /// `min_k [MD_k(z) - MD_0(z)]` per row; may be negative.
    pub fn rmd_score(&self, test: &EmbeddingMatrix) -> Result<ScoreVector> {
        self.check_dim(test)?;
        let scores = (0..test.n_rows())
            .into_par_iter()
            .map(|i| {
                let z = test.row(i);
                let background = self.background_distance(z);
                self.class_distances(z)
                    .into_iter()
                    .map(|md| md - background)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        ScoreVector::new(scores)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(GAUSSIAN_MAGIC);
        w.usize(self.dim);
        w.usize(self.class_means.len());
        for m in &self.class_means {
            w.f64s(m);
        }
        w.f64s(&self.global_mean);
        for f in [&self.shared, &self.background] {
            w.f64(f.ridge);
            w.f64s(&f.lower);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_header(GAUSSIAN_MAGIC)?;
        let dim = r.usize()?;
        let n_classes = r.usize()?;
        let mut class_means = Vec::with_capacity(n_classes.min(1 << 16));
        for _ in 0..n_classes {
            class_means.push(r.f64s()?);
        }
        let global_mean = r.f64s()?;
        let mut factor = || -> Result<CholeskyFactor> {
            let ridge = r.f64()?;
            let lower = r.f64s()?;
            Ok(CholeskyFactor { dim, lower, ridge })
        };
        let shared = factor()?;
        let background = factor()?;
        r.finish()?;
        let bad = |f: &CholeskyFactor| {
            f.lower.len() != dim * dim || f.diagonal().any(|v| !(v > 0.0))
        };
        if dim == 0
            || n_classes == 0
            || global_mean.len() != dim
            || class_means.iter().any(|m| m.len() != dim)
            || bad(&shared)
            || bad(&background)
        {
            return Err(OodError::Shape("corrupt gaussian model".into()));
        }
        Ok(Self::assemble(dim, class_means, shared, global_mean, background))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| OodError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

pub fn fit_gaussian(
    train: &EmbeddingMatrix,
    labels: &LabelVector,
    ridge_scale: f64,
) -> Result<GaussianModel> {
    GaussianModel::fit(train, labels, ridge_scale)
}
