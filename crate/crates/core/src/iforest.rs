//! Isolation forest over embeddings (axis-aligned splits).

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{OodError, Result};
use crate::io::container::{read_file, ByteReader, ByteWriter};
use crate::io::{EmbeddingMatrix, ScoreVector};
use crate::seed::{derive_seed, rng, DetRng};

pub const DEFAULT_N_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;
pub const EULER_MASCHERONI: f64 = 0.577_215_664_9;
const FOREST_MAGIC: &[u8; 4] = b"OODF";

/// Harmonic number approximation `ln(i) + gamma`.
fn harmonic(i: f64) -> f64 {
    i.ln() + EULER_MASCHERONI
}

/// Average path length of an unsuccessful BST search among `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * harmonic(m - 1.0) - 2.0 * (m - 1.0) / m
        }
    }
}

/// `2^(-mean_path / c_psi)`.
pub fn anomaly_score(mean_path: f64, c_psi: f64) -> f64 {
    2f64.powf(-mean_path / c_psi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum IsoNode {
    /// Values `< threshold` go left.
    Split {
        dim: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        size: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<IsoNode>,
}

impl IsolationTree {
    pub fn nodes(&self) -> &[IsoNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[IsoNode], i: usize) -> usize {
            match &nodes[i] {
                IsoNode::Leaf { .. } => 0,
                IsoNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Edges to the reached leaf plus `c(leaf size)`.
    pub fn path_length(&self, z: &[f32]) -> f64 {
        let mut node = 0usize;
        let mut edges = 0usize;
        loop {
            match &self.nodes[node] {
                IsoNode::Leaf { size } => {
                    return edges as f64 + average_path_length(*size as usize);
                }
                IsoNode::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    node = if (z[*dim as usize] as f64) < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                    edges += 1;
                }
            }
        }
    }
}

struct IsoBuilder<'a> {
    data: &'a EmbeddingMatrix,
    height_limit: usize,
    rng: DetRng,
    nodes: Vec<IsoNode>,
}

impl IsoBuilder<'_> {
    fn build(&mut self, items: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(IsoNode::Leaf {
            size: items.len() as u32,
        });
        if depth >= self.height_limit || items.len() <= 1 {
            return id;
        }
        // Only dimensions with a non-degenerate range in this subset.
        let d = self.data.dim();
        let mut lo = vec![f32::INFINITY; d];
        let mut hi = vec![f32::NEG_INFINITY; d];
        for &i in &items {
            for (j, &v) in self.data.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let splittable: Vec<usize> = (0..d).filter(|&j| lo[j] < hi[j]).collect();
        if splittable.is_empty() {
            return id;
        }
        let dim = splittable[self.rng.random_range(0..splittable.len())];
        let (min, max) = (lo[dim] as f64, hi[dim] as f64);
        let threshold = loop {
            let t = self.rng.random_range(min..max);
            if t > min {
                break t;
            }
        };
        let (left, right): (Vec<usize>, Vec<usize>) = items
            .into_iter()
            .partition(|&i| (self.data.row(i)[dim] as f64) < threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id as usize] = IsoNode::Split {
            dim: dim as u32,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForestModel {
    dim: usize,
    psi: usize,
    height_limit: usize,
    seed: u64,
    c_psi: f64,
    trees: Vec<IsolationTree>,
}

impl IsolationForestModel {
    /// Each tree sees an independent subsample (without replacement) of
    /// `psi` rows, drawn from a stream seeded by `(seed, tree id)`.
    pub fn fit(train: &EmbeddingMatrix, n_trees: usize, psi: usize, seed: u64) -> Result<Self> {
        let n = train.n_rows();
        if n < 2 {
            return Err(OodError::InvalidParameter(format!(
                "isolation forest needs at least 2 training rows, got {n}"
            )));
        }
        if psi < 2 || psi > n {
            return Err(OodError::InvalidParameter(format!(
                "subsample size must be in [2, {n}], got {psi}"
            )));
        }
        if n_trees == 0 {
            return Err(OodError::InvalidParameter("n_trees must be >= 1".into()));
        }
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut r = rng(derive_seed(seed, t as u64));
                let mut items = sample(&mut r, n, psi).into_vec();
                items.sort_unstable();
                let mut b = IsoBuilder {
                    data: train,
                    height_limit,
                    rng: r,
                    nodes: Vec::new(),
                };
                b.build(items, 0);
                IsolationTree { nodes: b.nodes }
            })
            .collect();
        Ok(IsolationForestModel {
            dim: train.dim(),
            psi,
            height_limit,
            seed,
            c_psi: average_path_length(psi),
            trees,
        })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn psi(&self) -> usize {
        self.psi
    }

    pub fn height_limit(&self) -> usize {
        self.height_limit
    }

    pub fn c_psi(&self) -> f64 {
        self.c_psi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean path length over all trees.
    pub fn mean_path_length(&self, z: &[f32]) -> f64 {
        self.trees.iter().map(|t| t.path_length(z)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, test: &EmbeddingMatrix) -> Result<ScoreVector> {
        if test.dim() != self.dim {
            return Err(OodError::DimensionMismatch {
                what: "embedding",
                expected: self.dim,
                found: test.dim(),
            });
        }
        let scores = (0..test.n_rows())
            .into_par_iter()
            .map(|i| anomaly_score(self.mean_path_length(test.row(i)), self.c_psi))
            .collect();
        ScoreVector::new(scores)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(FOREST_MAGIC);
        w.usize(self.dim);
        w.usize(self.psi);
        w.u64(self.seed);
        w.usize(self.trees.len());
        for tree in &self.trees {
            w.usize(tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    IsoNode::Split {
                        dim,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(0);
                        w.u32(*dim);
                        w.f64(*threshold);
                        w.u32(*left);
                        w.u32(*right);
                    }
                    IsoNode::Leaf { size } => {
                        w.u8(1);
                        w.u32(*size);
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_header(FOREST_MAGIC)?;
        let dim = r.usize()?;
        let psi = r.usize()?;
        let seed = r.u64()?;
        let n_trees = r.usize()?;
        if psi < 2 || n_trees == 0 || dim == 0 {
            return Err(OodError::Shape("corrupt isolation forest header".into()));
        }
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let n_nodes = r.usize()?;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => {
                        let node = IsoNode::Split {
                            dim: r.u32()?,
                            threshold: r.f64()?,
                            left: r.u32()?,
                            right: r.u32()?,
                        };
                        if let IsoNode::Split { dim: j, left, right, .. } = &node {
                            if *j as usize >= dim || *left as usize >= n_nodes || *right as usize >= n_nodes {
                                return Err(OodError::Shape("corrupt isolation split".into()));
                            }
                        }
                        node
                    }
                    1 => IsoNode::Leaf { size: r.u32()? },
                    tag => return Err(OodError::Shape(format!("unknown node tag {tag}"))),
                });
            }
            if nodes.is_empty() {
                return Err(OodError::Shape("empty tree".into()));
            }
            trees.push(IsolationTree { nodes });
        }
        r.finish()?;
        Ok(IsolationForestModel {
            dim,
            psi,
            height_limit: (psi as f64).log2().ceil() as usize,
            seed,
            c_psi: average_path_length(psi),
            trees,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| OodError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

pub fn fit_iforest(
    train: &EmbeddingMatrix,
    n_trees: usize,
    psi: usize,
    seed: u64,
) -> Result<IsolationForestModel> {
    IsolationForestModel::fit(train, n_trees, psi, seed)
}
