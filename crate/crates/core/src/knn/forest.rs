//! Random-projection forest for approximate cosine KNN, in the style of Annoy.
//!
//! Each tree splits its node's subset by the perpendicular bisector of two
//! randomly chosen (unit-normalised) members until a subset fits in a leaf.
//! Queries walk every tree at once through a shared best-first queue keyed
//! by the smallest hyperplane margin seen on the way down, collect leaf
//! members until the candidate budget is met, then re-rank candidates by
//! their true cosine distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{check_k, dot, normalize, select_k, NeighborList, UnitVectors};
use crate::error::{OodError, Result};
use crate::io::container::{read_file, ByteReader, ByteWriter};
use crate::io::Matrix;
use crate::seed::{derive_seed, rng, DetRng};

pub const DEFAULT_N_TREES: usize = 50;
pub const DEFAULT_LEAF_CAPACITY: usize = 32;
/// Candidates gathered per tree per requested neighbour.
pub const BUDGET_FACTOR: usize = 10;

const INDEX_MAGIC: &[u8; 4] = b"OODI";
/// Bisector draws tried before falling back to a balanced median split.
const SPLIT_ATTEMPTS: usize = 3;

pub fn default_search_budget(n_trees: usize, k: usize) -> usize {
    n_trees * k * BUDGET_FACTOR
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Points with `normal . x - offset > 0` go left, the rest right.
    Split {
        normal: Vec<f64>,
        offset: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        items: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf buckets in depth-first order.
    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { items } => Some(items.as_slice()),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpForestIndex {
    vectors: UnitVectors,
    trees: Vec<Tree>,
    leaf_capacity: usize,
    seed: u64,
}

struct TreeBuilder<'a> {
    vectors: &'a UnitVectors,
    leaf_capacity: usize,
    rng: DetRng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn side(normal: &[f64], offset: f64, x: &[f64]) -> bool {
        dot(normal, x) - offset > 0.0
    }

    fn bisector(&mut self, items: &[u32]) -> Option<(Vec<f64>, f64)> {
        let n = items.len();
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let a = self.vectors.row(items[i] as usize);
        let b = self.vectors.row(items[j] as usize);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let normal = normalize(&diff)?;
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let offset = dot(&normal, &mid);
        Some((normal, offset))
    }

    /// Random direction through the median projection; always splits evenly.
    fn balanced(&mut self, items: &[u32]) -> (Vec<f64>, f64, Vec<u32>, Vec<u32>) {
        let dim = self.vectors.dim();
        let normal = loop {
            let g: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
            if let Some(u) = normalize(&g) {
                break u;
            }
        };
        let mut proj: Vec<(f64, u32)> = items
            .iter()
            .map(|&i| (dot(&normal, self.vectors.row(i as usize)), i))
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let half = proj.len() / 2;
        let offset = 0.5 * (proj[half - 1].0 + proj[half].0);
        let right = proj[..half].iter().map(|p| p.1).collect();
        let left = proj[half..].iter().map(|p| p.1).collect();
        (normal, offset, left, right)
    }

    fn build(&mut self, items: Vec<u32>) -> u32 {
        let id = self.nodes.len() as u32;
        if items.len() <= self.leaf_capacity {
            self.nodes.push(Node::Leaf { items });
            return id;
        }
        self.nodes.push(Node::Leaf { items: Vec::new() });

        let mut chosen = None;
        for _ in 0..SPLIT_ATTEMPTS {
            let Some((normal, offset)) = self.bisector(&items) else {
                continue;
            };
            let (left, right): (Vec<u32>, Vec<u32>) = items
                .iter()
                .partition(|&&i| Self::side(&normal, offset, self.vectors.row(i as usize)));
            if !left.is_empty() && !right.is_empty() {
                chosen = Some((normal, offset, left, right));
                break;
            }
        }
        let (normal, offset, left, right) = match chosen {
            Some(c) => c,
            None => self.balanced(&items),
        };
        drop(items);
        let l = self.build(left);
        let r = self.build(right);
        self.nodes[id as usize] = Node::Split {
            normal,
            offset,
            left: l,
            right: r,
        };
        id
    }
}

#[derive(Debug, PartialEq)]
struct Frontier {
    priority: f64,
    tree: u32,
    node: u32,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RpForestIndex {
    /// Builds a forest over the rows of `train`. Trees are seeded from
    /// `(seed, tree id)` and can be built in any order.
    pub fn build(train: &Matrix, n_trees: usize, leaf_capacity: usize, seed: u64) -> Result<Self> {
        Self::build_from_vectors(UnitVectors::from_matrix(train)?, n_trees, leaf_capacity, seed)
    }

    pub fn build_from_vectors(
        vectors: UnitVectors,
        n_trees: usize,
        leaf_capacity: usize,
        seed: u64,
    ) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(OodError::InvalidParameter(format!(
                "index needs at least 2 training rows, got {}",
                vectors.len()
            )));
        }
        if vectors.len() > u32::MAX as usize {
            return Err(OodError::InvalidParameter("too many training rows".into()));
        }
        if n_trees == 0 {
            return Err(OodError::InvalidParameter("n_trees must be >= 1".into()));
        }
        if leaf_capacity < 2 {
            return Err(OodError::InvalidParameter("leaf_capacity must be >= 2".into()));
        }
        let all: Vec<u32> = (0..vectors.len() as u32).collect();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut builder = TreeBuilder {
                    vectors: &vectors,
                    leaf_capacity,
                    rng: rng(derive_seed(seed, t as u64)),
                    nodes: Vec::new(),
                };
                builder.build(all.clone());
                Tree {
                    nodes: builder.nodes,
                }
            })
            .collect();
        Ok(RpForestIndex {
            vectors,
            trees,
            leaf_capacity,
            seed,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_items(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn vectors(&self) -> &UnitVectors {
        &self.vectors
    }

    /// Approximate neighbours of a raw (unnormalised) query.
    pub fn query(&self, query: &[f32], k: usize, search_budget: usize) -> Result<NeighborList> {
        if query.len() != self.dim() {
            return Err(OodError::DimensionMismatch {
                what: "query",
                expected: self.dim(),
                found: query.len(),
            });
        }
        let q = normalize(query).ok_or(OodError::ZeroNorm(0))?;
        self.query_unit(&q, k, search_budget)
    }

    /// Approximate neighbours of a unit-normalised query.
    pub fn query_unit(&self, unit_query: &[f64], k: usize, search_budget: usize) -> Result<NeighborList> {
        check_k(k, self.n_items())?;
        if search_budget < k {
            return Err(OodError::InvalidParameter(format!(
                "search_budget {search_budget} is smaller than K = {k}"
            )));
        }
        if unit_query.len() != self.dim() {
            return Err(OodError::DimensionMismatch {
                what: "query",
                expected: self.dim(),
                found: unit_query.len(),
            });
        }
        let candidates = self.candidates(unit_query, search_budget);
        let scored = candidates
            .into_iter()
            .map(|i| (self.vectors.distance(i, unit_query), i))
            .collect();
        Ok(select_k(scored, k))
    }

    /// Distinct training rows reached by best-first traversal, at least
    /// `budget` of them unless the forest is exhausted first.
    pub fn candidates(&self, unit_query: &[f64], budget: usize) -> Vec<usize> {
        // a full traversal would reach every row; skip it
        if budget >= self.n_items() {
            return (0..self.n_items()).collect();
        }
        let mut seen = vec![false; self.n_items()];
        let mut out = Vec::with_capacity(budget.min(self.n_items()));
        let mut heap: BinaryHeap<Frontier> = (0..self.trees.len() as u32)
            .map(|tree| Frontier {
                priority: f64::INFINITY,
                tree,
                node: 0,
            })
            .collect();
        while out.len() < budget {
            let Some(top) = heap.pop() else { break };
            match &self.trees[top.tree as usize].nodes[top.node as usize] {
                Node::Leaf { items } => {
                    for &i in items {
                        let i = i as usize;
                        if !seen[i] {
                            seen[i] = true;
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin = dot(normal, unit_query) - offset;
                    heap.push(Frontier {
                        priority: top.priority.min(margin),
                        tree: top.tree,
                        node: *left,
                    });
                    heap.push(Frontier {
                        priority: top.priority.min(-margin),
                        tree: top.tree,
                        node: *right,
                    });
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(INDEX_MAGIC);
        w.usize(self.leaf_capacity);
        w.u64(self.seed);
        w.usize(self.vectors.len());
        w.usize(self.vectors.dim());
        w.f64s(self.vectors.raw());
        w.usize(self.trees.len());
        for tree in &self.trees {
            w.usize(tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.u8(0);
                        w.f64s(normal);
                        w.f64(*offset);
                        w.u32(*left);
                        w.u32(*right);
                    }
                    Node::Leaf { items } => {
                        w.u8(1);
                        w.u32s(items);
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_header(INDEX_MAGIC)?;
        let leaf_capacity = r.usize()?;
        let seed = r.u64()?;
        let n = r.usize()?;
        let dim = r.usize()?;
        let vectors = UnitVectors::from_raw(n, dim, r.f64s()?)?;
        let n_trees = r.usize()?;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let n_nodes = r.usize()?;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                let node = match r.u8()? {
                    0 => {
                        let normal = r.f64s()?;
                        let offset = r.f64()?;
                        let left = r.u32()?;
                        let right = r.u32()?;
                        if normal.len() != dim || left as usize >= n_nodes || right as usize >= n_nodes {
                            return Err(OodError::Shape("corrupt split node".into()));
                        }
                        Node::Split {
                            normal,
                            offset,
                            left,
                            right,
                        }
                    }
                    1 => {
                        let items = r.u32s()?;
                        if items.iter().any(|&i| i as usize >= n) {
                            return Err(OodError::Shape("leaf item out of range".into()));
                        }
                        Node::Leaf { items }
                    }
                    tag => return Err(OodError::Shape(format!("unknown node tag {tag}"))),
                };
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(OodError::Shape("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        r.finish()?;
        Ok(RpForestIndex {
            vectors,
            trees,
            leaf_capacity,
            seed,
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

/// Shuffled copy of `0..n`; used by tests and benchmarks to pick queries.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::exact_search;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        let data = (0..n * d)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut r);
                v as f32
            })
            .collect();
        Matrix::new(n, d, data).unwrap()
    }

    #[test]
    fn leaves_partition_every_tree() {
        let m = gaussian_matrix(100, 8, 1);
        let index = RpForestIndex::build(&m, 5, 10, 42).unwrap();
        for tree in index.trees() {
            let mut all: Vec<u32> = tree.leaves().flatten().copied().collect();
            assert!(tree.leaves().all(|l| l.len() <= 10 && !l.is_empty()));
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<u32>>());
            for node in tree.nodes() {
                if let Node::Split { normal, .. } = node {
                    assert!((dot(normal, normal) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let m = gaussian_matrix(200, 6, 2);
        let a = RpForestIndex::build(&m, 4, 8, 42).unwrap();
        let b = RpForestIndex::build(&m, 4, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = RpForestIndex::build(&m, 4, 8, 43).unwrap();
        assert_ne!(a.trees(), c.trees());
    }

    #[test]
    fn different_seeds_give_different_splits() {
        let m = gaussian_matrix(300, 8, 3);
        let mut differing = 0;
        for trial in 0..20u64 {
            let a = RpForestIndex::build(&m, 1, 16, 2 * trial + 1).unwrap();
            let b = RpForestIndex::build(&m, 1, 16, 2 * trial + 2).unwrap();
            if a.trees()[0].nodes()[0] != b.trees()[0].nodes()[0] {
                differing += 1;
            }
        }
        assert!(differing >= 19, "only {differing}/20 root splits differed");
    }

    #[test]
    fn duplicate_points_use_balanced_fallback() {
        let m = Matrix::new(50, 3, [1.0f32, 2.0, 3.0].repeat(50)).unwrap();
        let index = RpForestIndex::build(&m, 2, 4, 7).unwrap();
        for tree in index.trees() {
            assert!(tree.leaves().all(|l| l.len() <= 4));
            assert_eq!(tree.leaves().map(|l| l.len()).sum::<usize>(), 50);
        }
        let nl = index.query(&[1.0, 2.0, 3.0], 5, 5).unwrap();
        assert_eq!(nl.len(), 5);
        assert!(nl.distances.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn full_budget_is_exact() {
        let m = gaussian_matrix(150, 5, 4);
        let index = RpForestIndex::build(&m, 3, 8, 9).unwrap();
        let queries = gaussian_matrix(20, 5, 5);
        for q in queries.rows() {
            let unit = normalize(q).unwrap();
            let approx = index.query_unit(&unit, 7, 150).unwrap();
            let exact = exact_search(index.vectors(), &unit, 7).unwrap();
            assert_eq!(approx, exact);
        }
    }

    #[test]
    fn traversal_reaches_distinct_rows() {
        let m = gaussian_matrix(150, 5, 4);
        let index = RpForestIndex::build(&m, 3, 8, 9).unwrap();
        let unit = normalize(m.row(3)).unwrap();
        for budget in [1, 40, 149] {
            let mut c = index.candidates(&unit, budget);
            let n = c.len();
            assert!(n >= budget);
            c.sort_unstable();
            c.dedup();
            assert_eq!(c.len(), n);
        }
    }

    #[test]
    fn distances_are_true_cosine() {
        let m = gaussian_matrix(400, 12, 6);
        let index = RpForestIndex::build(&m, 4, 16, 1).unwrap();
        for q in gaussian_matrix(10, 12, 7).rows() {
            let nl = index.query(q, 5, 40).unwrap();
            for (&i, &d) in nl.indices.iter().zip(&nl.distances) {
                let truth = crate::knn::cosine_distance(q, m.row(i)).unwrap();
                assert!((truth - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn self_query_finds_itself() {
        let m = gaussian_matrix(500, 16, 8);
        let index = RpForestIndex::build(&m, 5, 16, 11).unwrap();
        for i in (0..500).step_by(7) {
            let nl = index.query(m.row(i), 1, 1).unwrap();
            assert_eq!(nl.indices[0], i);
        }
    }

    #[test]
    fn errors() {
        let m = gaussian_matrix(10, 3, 9);
        let index = RpForestIndex::build(&m, 2, 4, 0).unwrap();
        assert!(matches!(
            index.query(&[1.0, 0.0, 0.0], 11, 20),
            Err(OodError::KExceedsTrainingSize { .. })
        ));
        assert!(index.query(&[1.0, 0.0, 0.0], 5, 4).is_err());
        assert!(index.query(&[1.0, 0.0], 1, 4).is_err());
        let one = gaussian_matrix(1, 3, 9);
        assert!(RpForestIndex::build(&one, 2, 4, 0).is_err());
        assert!(RpForestIndex::build(&m, 0, 4, 0).is_err());
        assert!(RpForestIndex::build(&m, 2, 1, 0).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let m = gaussian_matrix(120, 6, 10);
        let index = RpForestIndex::build(&m, 3, 8, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.oodi");
        index.save(&path).unwrap();
        let loaded = RpForestIndex::load(&path).unwrap();
        assert_eq!(loaded, index);
        let q = m.row(3);
        assert_eq!(loaded.query(q, 4, 30).unwrap(), index.query(q, 4, 30).unwrap());

        let mut bytes = index.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(RpForestIndex::from_bytes(&bytes).is_err());
    }
}
