//! Synthetic bundle: a 3-class Gaussian mixture with a displaced OOD mixture
//! and posterior-derived probability rows.
//!
//! Class `k` has mean `separation * e_k` and unit isotropic noise, so the
//! pooled standard deviation is 1. OOD component `j` sits over the centroid of
//! the class means and is pushed along `e_{C+j}`, orthogonal to every class
//! mean, far enough to be `displacement` standard deviations from each class
//! mean. Probability rows are the class posteriors softened by `temperature`,
//! perturbed by small Gaussian noise and projected back onto the simplex.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::io::config::{KValues, RunConfig};
use crate::io::{write_labels, write_matrix, EmbeddingMatrix, LabelVector, Method, ProbabilityMatrix};
use crate::seed::{derive_seed, rng, DetRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthVariant {
    /// Well separated classes; OOD points carry full in-plane noise.
    Standard,
    /// Closer classes, with OOD points packed around the point where all
    /// decision boundaries meet, so their posteriors are spread over every
    /// class while in-distribution confusions are mostly between two classes.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub variant: SynthVariant,
    pub dim: usize,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_ood: usize,
    /// Length of each class mean, in pooled standard deviations.
    pub separation: f64,
    /// Distance from the OOD component means to every class mean.
    pub displacement: f64,
    /// Scale applied to the OOD noise within the span of the class means.
    pub ood_plane_spread: f64,
    pub temperature: f64,
    pub prob_noise: f64,
}

impl SynthParams {
    pub fn standard(seed: u64) -> Self {
        SynthParams {
            seed,
            variant: SynthVariant::Standard,
            dim: 32,
            n_classes: 3,
            n_train: 5000,
            n_test_in: 1000,
            n_ood: 1000,
            separation: 6.0,
            displacement: 8.0,
            ood_plane_spread: 1.0,
            temperature: 4.0,
            prob_noise: 0.01,
        }
    }

    pub fn boundary(seed: u64) -> Self {
        SynthParams {
            variant: SynthVariant::Boundary,
            separation: 3.0,
            ood_plane_spread: 0.5,
            ..SynthParams::standard(seed)
        }
    }

    pub fn for_variant(variant: SynthVariant, seed: u64) -> Self {
        match variant {
            SynthVariant::Standard => SynthParams::standard(seed),
            SynthVariant::Boundary => SynthParams::boundary(seed),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OodError::InvalidParameter(msg));
        if self.n_classes < 2 || self.dim < 2 * self.n_classes {
            return bad(format!(
                "need at least 2 classes and dim >= 2 * n_classes, got {} classes in {} dims",
                self.n_classes, self.dim
            ));
        }
        if self.n_train < 2 * self.n_classes || self.n_test_in == 0 || self.n_ood == 0 {
            return bad("too few rows requested".into());
        }
        if !(self.temperature > 0.0) || !(self.prob_noise >= 0.0) || !(self.ood_plane_spread >= 0.0) {
            return bad("temperature must be positive; noise and spread non-negative".into());
        }
        if !(self.displacement >= self.centroid_radius()) {
            return bad(format!(
                "displacement {} is below the centroid radius {:.4}",
                self.displacement,
                self.centroid_radius()
            ));
        }
        Ok(())
    }

    /// Distance from each class mean to the centroid of all class means.
    pub fn centroid_radius(&self) -> f64 {
        let c = self.n_classes as f64;
        self.separation * ((c - 1.0) / c).sqrt()
    }

    fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.n_classes)
            .map(|k| {
                let mut m = vec![0.0; self.dim];
                m[k] = self.separation;
                m
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub params: SynthParams,
    pub train_embeddings: EmbeddingMatrix,
    pub train_probs: ProbabilityMatrix,
    pub train_labels: LabelVector,
    pub test_in_embeddings: EmbeddingMatrix,
    pub test_in_probs: ProbabilityMatrix,
    pub test_ood_embeddings: EmbeddingMatrix,
    pub test_ood_probs: ProbabilityMatrix,
}

fn gaussian(r: &mut DetRng) -> f64 {
    r.sample(StandardNormal)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct Sampler<'a> {
    params: &'a SynthParams,
    means: Vec<Vec<f64>>,
}

impl Sampler<'_> {
    fn posterior(&self, z: &[f32], r: &mut DetRng) -> Vec<f32> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let sq: f64 = z.iter().zip(m).map(|(&a, b)| (a as f64 - b).powi(2)).sum();
                -sq / (2.0 * self.params.temperature)
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exp.iter().sum();
        let noisy: Vec<f64> = exp
            .iter()
            .map(|e| e / total + self.params.prob_noise * gaussian(r))
            .collect();
        project_to_simplex(&noisy).into_iter().map(|p| p as f32).collect()
    }

    /// Rows around `centre(r)`, with the first `n_classes` noise coordinates
    /// scaled by `plane_scale`.
    fn rows(
        &self,
        n: usize,
        r: &mut DetRng,
        plane_scale: f64,
        mut centre: impl FnMut(&mut DetRng) -> (Vec<f64>, u32),
    ) -> Result<(EmbeddingMatrix, ProbabilityMatrix, Vec<u32>)> {
        let p = self.params;
        let mut emb = Vec::with_capacity(n * p.dim);
        let mut probs = Vec::with_capacity(n * p.n_classes);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (mean, label) = centre(r);
            let z: Vec<f32> = mean
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let scale = if j < p.n_classes { plane_scale } else { 1.0 };
                    (m + scale * gaussian(r)) as f32
                })
                .collect();
            probs.extend(self.posterior(&z, r));
            emb.extend(z);
            labels.push(label);
        }
        Ok((
            EmbeddingMatrix::new(n, p.dim, emb)?,
            ProbabilityMatrix::new(n, p.n_classes, probs)?,
            labels,
        ))
    }
}

/// Generates the bundle; identical parameters give identical bytes.
pub fn generate(params: &SynthParams) -> Result<SynthBundle> {
    params.validate()?;
    let c = params.n_classes;
    let sampler = Sampler {
        params,
        means: params.class_means(),
    };
    let class_row = |r: &mut DetRng| {
        let k = r.random_range(0..c);
        (sampler.means[k].clone(), k as u32)
    };
    let mut r = rng(derive_seed(params.seed, 1));
    let (train_embeddings, train_probs, labels) = sampler.rows(params.n_train, &mut r, 1.0, class_row)?;
    let mut r = rng(derive_seed(params.seed, 2));
    let (test_in_embeddings, test_in_probs, _) = sampler.rows(params.n_test_in, &mut r, 1.0, class_row)?;

    let centroid = params.separation / c as f64;
    let lift = (params.displacement.powi(2) - params.centroid_radius().powi(2)).sqrt();
    let ood_row = |r: &mut DetRng| {
        let j = r.random_range(0..c);
        let mut m = vec![0.0; params.dim];
        m[..c].iter_mut().for_each(|v| *v = centroid);
        m[c + j] = lift;
        (m, j as u32)
    };
    let mut r = rng(derive_seed(params.seed, 3));
    let (test_ood_embeddings, test_ood_probs, _) =
        sampler.rows(params.n_ood, &mut r, params.ood_plane_spread, ood_row)?;

    Ok(SynthBundle {
        params: params.clone(),
        train_labels: LabelVector::new(labels, c)?,
        train_embeddings,
        train_probs,
        test_in_embeddings,
        test_in_probs,
        test_ood_embeddings,
        test_ood_probs,
    })
}

/// Run configuration pointing at the files written by [`write_bundle`].
pub fn default_run_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_json(
        r#"{
            "train_embeddings": "train_embeddings.oodm",
            "train_probs": "train_probs.oodm",
            "train_labels": "train_labels.oodl",
            "test_in_embeddings": "test_in_embeddings.oodm",
            "test_in_probs": "test_in_probs.oodm",
            "test_ood_embeddings": "test_ood_embeddings.oodm",
            "test_ood_probs": "test_ood_probs.oodm",
            "methods": ["msp", "entropy", "mahalanobis", "rmd", "isolation_forest",
                        "knn_distance", "knn_distpred", "knn_prediction"],
            "knn": {"k": [5, 10, 15, 100]}
        }"#,
    )
    .expect("built-in config parses");
    cfg.in_name = "synthetic".into();
    cfg.ood_name = "displaced".into();
    cfg.seed = seed;
    cfg
}

/// Writes the OODM/OODL files, `synth.json` and a ready-to-run `run.json`.
pub fn write_bundle(bundle: &SynthBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))?;
    write_matrix(dir.join("train_embeddings.oodm"), &bundle.train_embeddings)?;
    write_matrix(dir.join("train_probs.oodm"), &bundle.train_probs)?;
    write_labels(dir.join("train_labels.oodl"), &bundle.train_labels)?;
    write_matrix(dir.join("test_in_embeddings.oodm"), &bundle.test_in_embeddings)?;
    write_matrix(dir.join("test_in_probs.oodm"), &bundle.test_in_probs)?;
    write_matrix(dir.join("test_ood_embeddings.oodm"), &bundle.test_ood_embeddings)?;
    write_matrix(dir.join("test_ood_probs.oodm"), &bundle.test_ood_probs)?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| OodError::io(&path, e))
    };
    write(
        "synth.json",
        serde_json::to_string_pretty(&bundle.params).expect("params serialise"),
    )?;
    write("run.json", default_run_config(bundle.params.seed).to_json())
}

/// Methods whose synthetic AUROC should reach 0.99 on the standard variant.
pub const SEPARATING_METHODS: [Method; 4] = [
    Method::KnnDistance,
    Method::KnnDistpred,
    Method::Mahalanobis,
    Method::Rmd,
];

/// The K sweep used for stability checks.
pub fn k_sweep() -> KValues {
    KValues::Many(vec![5, 10, 15, 100])
}
