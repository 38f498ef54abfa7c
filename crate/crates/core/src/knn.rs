//! Exact k-nearest-neighbour search with a k-d tree, and the local-histogram
//! CDF predictor built on it.
//!
//! Neighbours are ordered by `(distance, training index)`, so results are
//! deterministic under ties and identical to [`brute_force_knn`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::ingest::Dataset;
use crate::scoring::{empirical_cdf, CdfPrediction};
use crate::{Error, Predictor, Result};

pub const DEFAULT_LEAF_CAPACITY: usize = 16;
pub const DEFAULT_K: usize = 150;
pub const DEFAULT_P: f64 = 2.0;

const MAGIC: &[u8; 6] = b"RAINKD";
const VERSION: &[u8; 2] = b"01";

/// Minkowski distance of order `p`, compared in a monotone "reduced" form
/// (no final root) during search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Manhattan,
    Euclidean,
    Chebyshev,
    Minkowski(f64),
}

impl Metric {
    /// `p` in `[1, inf]`; `f64::INFINITY` selects the max-coordinate distance.
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::Config(format!("l_p distance needs p >= 1, got {p}")));
        }
        Ok(if p == 1.0 {
            Metric::Manhattan
        } else if p == 2.0 {
            Metric::Euclidean
        } else if p.is_infinite() {
            Metric::Chebyshev
        } else {
            Metric::Minkowski(p)
        })
    }

    #[inline]
    fn axis(&self, diff: f64) -> f64 {
        let a = diff.abs();
        match *self {
            Metric::Manhattan | Metric::Chebyshev => a,
            Metric::Euclidean => a * a,
            Metric::Minkowski(p) => a.powf(p),
        }
    }

    #[inline]
    fn reduced(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match *self {
            Metric::Chebyshev => diffs.fold(0.0, |m, d| m.max(d.abs())),
            _ => diffs.map(|d| self.axis(d)).sum(),
        }
    }

    #[inline]
    fn finish(&self, reduced: f64) -> f64 {
        match *self {
            Metric::Manhattan | Metric::Chebyshev => reduced,
            Metric::Euclidean => reduced.sqrt(),
            Metric::Minkowski(p) => reduced.powf(1.0 / p),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.finish(self.reduced(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    /// Ascending.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

fn finish(metric: Metric, mut cands: Vec<Candidate>) -> Neighbors {
    cands.sort_unstable();
    Neighbors {
        indices: cands.iter().map(|c| c.index).collect(),
        distances: cands.iter().map(|c| metric.finish(c.dist)).collect(),
    }
}

fn check_query(m: usize, dim: usize, x: &[f64], k: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::Size(format!("k = {k} must be in 1..={m}")));
    }
    if x.len() != dim {
        return Err(Error::Shape(format!(
            "query has {} coordinates, points have {dim}",
            x.len()
        )));
    }
    Ok(())
}

/// Full scan, sorted by `(distance, index)`.
pub fn brute_force_knn(points: &[f64], dim: usize, x: &[f64], k: usize, p: f64) -> Result<Neighbors> {
    let metric = Metric::new(p)?;
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape("point matrix width mismatch".into()));
    }
    check_query(points.len() / dim, dim, x, k)?;
    let mut cands: Vec<Candidate> = points
        .chunks_exact(dim)
        .enumerate()
        .map(|(index, pt)| Candidate {
            dist: metric.reduced(x, pt),
            index,
        })
        .collect();
    cands.sort_unstable();
    cands.truncate(k);
    Ok(finish(metric, cands))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    /// Range into `order`.
    Leaf { start: usize, end: usize },
    /// Left subtree coordinates are `<= value`, right subtree `>= value`.
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    points: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    leaf_capacity: usize,
    /// Permutation of point indices; every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds a median-split tree over row-major `points` (`labels.len()` rows).
    pub fn build(points: &[f64], labels: &[f64], leaf_capacity: usize) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::Data("cannot build a tree over zero points".into()));
        }
        if points.is_empty() || !points.len().is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "{} coordinates for {m} points",
                points.len()
            )));
        }
        if leaf_capacity == 0 {
            return Err(Error::Config("leaf capacity must be at least 1".into()));
        }
        let dim = points.len() / m;
        for (row, pt) in points.chunks_exact(dim).enumerate() {
            if pt.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite coordinate in row {row}")));
            }
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            labels: labels.to_vec(),
            dim,
            leaf_capacity,
            order: (0..m).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, m, 0);
        Ok(tree)
    }

    pub fn from_dataset(data: &Dataset, leaf_capacity: usize) -> Result<Self> {
        Self::build(&data.matrix(), &data.labels()?, leaf_capacity)
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.leaf_capacity {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = depth % self.dim;
        let mid = (end - start - 1) / 2;
        let (points, d) = (&self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a * d + dim]
                .total_cmp(&points[b * d + dim])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[start + mid] * d + dim];
        self.nodes.push(Node::Leaf { start, end });
        let split = start + mid + 1;
        let left = self.build_node(start, split, depth + 1);
        let right = self.build_node(split, end, depth + 1);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of points reached by walking every leaf.
    pub fn traversal_count(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => count += end - start,
                Node::Split { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        count
    }

    pub fn query(&self, x: &[f64], k: usize, metric: Metric) -> Result<Neighbors> {
        check_query(self.len(), self.dim, x, k)?;
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, x, k, metric, &mut heap);
        Ok(finish(metric, heap.into_vec()))
    }

    fn search(
        &self,
        id: usize,
        x: &[f64],
        k: usize,
        metric: Metric,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let cand = Candidate {
                        dist: metric.reduced(x, self.point(index)),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = x[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, x, k, metric, heap);
                // Equal bounds must still be visited: a tied point with a
                // smaller index would displace the current k-th.
                if heap.len() < k || metric.axis(diff) <= heap.peek().unwrap().dist {
                    self.search(far, x, k, metric, heap);
                }
            }
        }
    }

    /// Queries every row of `queries` in parallel; output follows input order.
    pub fn query_batch(&self, queries: &[f64], k: usize, metric: Metric) -> Result<Vec<Neighbors>> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::Shape("query matrix width mismatch".into()));
        }
        queries
            .par_chunks(self.dim)
            .map(|x| self.query(x, k, metric))
            .collect()
    }

    /// Checks the split ordering and that leaves partition the points.
    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        let mut seen = vec![false; m];
        for &i in &self.order {
            if i >= m || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data("tree order is not a permutation".into()));
            }
        }
        if self.nodes.is_empty() {
            return Err(Error::Data("tree has no nodes".into()));
        }
        let range = self.validate_node(0, 0)?;
        if range != (0, m) {
            return Err(Error::Data("tree leaves do not cover every point".into()));
        }
        Ok(())
    }

    fn validate_node(&self, id: usize, depth: usize) -> Result<(usize, usize)> {
        let bad = |msg: &str| Error::Data(format!("corrupt tree node {id}: {msg}"));
        if depth > self.nodes.len() {
            return Err(bad("cycle"));
        }
        match *self.nodes.get(id).ok_or_else(|| bad("missing"))? {
            Node::Leaf { start, end } => {
                if start >= end || end > self.len() {
                    return Err(bad("bad leaf range"));
                }
                Ok((start, end))
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                if dim >= self.dim || left <= id || right <= id {
                    return Err(bad("bad split"));
                }
                let (ls, le) = self.validate_node(left, depth + 1)?;
                let (rs, re) = self.validate_node(right, depth + 1)?;
                if le != rs {
                    return Err(bad("children not contiguous"));
                }
                let coord = |i: &usize| self.points[i * self.dim + dim];
                if self.order[ls..le].iter().any(|i| coord(i) > value)
                    || self.order[rs..re].iter().any(|i| coord(i) < value)
                {
                    return Err(bad("split ordering violated"));
                }
                Ok((ls, re))
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(VERSION)?;
        for v in [self.len(), self.dim, self.leaf_capacity] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.points.iter().chain(&self.labels) {
            w.write_all(&v.to_le_bytes())?;
        }
        for &i in &self.order {
            w.write_all(&(i as u64).to_le_bytes())?;
        }
        w.write_all(&(self.nodes.len() as u64).to_le_bytes())?;
        for node in &self.nodes {
            match *node {
                Node::Leaf { start, end } => {
                    w.write_all(&[0])?;
                    w.write_all(&(start as u64).to_le_bytes())?;
                    w.write_all(&(end as u64).to_le_bytes())?;
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    w.write_all(&[1])?;
                    w.write_all(&(dim as u64).to_le_bytes())?;
                    w.write_all(&value.to_le_bytes())?;
                    w.write_all(&(left as u64).to_le_bytes())?;
                    w.write_all(&(right as u64).to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Data(format!("truncated tree file: {e}"));
        let mut header = [0u8; 8];
        r.read_exact(&mut header).map_err(io)?;
        if &header[..6] != MAGIC {
            return Err(Error::Data("not a k-d tree file".into()));
        }
        if &header[6..] != VERSION {
            return Err(Error::Data(format!(
                "unsupported tree file version `{}`",
                String::from_utf8_lossy(&header[6..])
            )));
        }
        let mut u64_buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64_buf).map_err(io)?;
            Ok(u64::from_le_bytes(u64_buf))
        };
        let m = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let leaf_capacity = read_u64(&mut r)? as usize;
        if m == 0 || dim == 0 || leaf_capacity == 0 || m.checked_mul(dim).is_none() {
            return Err(Error::Data("invalid tree dimensions".into()));
        }
        let read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(io)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let points = read_f64s(&mut r, m * dim)?;
        let labels = read_f64s(&mut r, m)?;
        if points.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in tree file".into()));
        }
        let order = (0..m)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_nodes = read_u64(&mut r)? as usize;
        if n_nodes == 0 || n_nodes > 2 * m {
            return Err(Error::Data("invalid node count".into()));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(io)?;
            nodes.push(match tag[0] {
                0 => Node::Leaf {
                    start: read_u64(&mut r)? as usize,
                    end: read_u64(&mut r)? as usize,
                },
                1 => Node::Split {
                    dim: read_u64(&mut r)? as usize,
                    value: f64::from_bits(read_u64(&mut r)?),
                    left: read_u64(&mut r)? as usize,
                    right: read_u64(&mut r)? as usize,
                },
                t => return Err(Error::Data(format!("unknown node tag {t}"))),
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::Data("trailing bytes in tree file".into()));
        }
        let tree = KdTree {
            points,
            labels,
            dim,
            leaf_capacity,
            order,
            nodes,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

pub fn query_knn(tree: &KdTree, x: &[f64], k: usize, p: f64) -> Result<Neighbors> {
    tree.query(x, k, Metric::new(p)?)
}

/// Empirical CDF of the labels of a neighbour set.
pub fn neighbors_cdf(tree: &KdTree, neighbors: &[usize]) -> CdfPrediction {
    empirical_cdf(neighbors.iter().map(|&i| tree.labels[i]))
        .expect("neighbour sets are non-empty")
}

pub fn knn_predict(tree: &KdTree, x: &[f64], k: usize, p: f64) -> Result<CdfPrediction> {
    let nb = query_knn(tree, x, k, p)?;
    Ok(neighbors_cdf(tree, &nb.indices))
}

/// A tree with fixed `k` and metric, usable as a [`Predictor`].
#[derive(Debug, Clone)]
pub struct KnnPredictor {
    pub tree: KdTree,
    pub k: usize,
    pub metric: Metric,
}

impl KnnPredictor {
    pub fn new(tree: KdTree, k: usize, p: f64) -> Result<Self> {
        if k == 0 || k > tree.len() {
            return Err(Error::Size(format!("k = {k} must be in 1..={}", tree.len())));
        }
        Ok(KnnPredictor {
            tree,
            k,
            metric: Metric::new(p)?,
        })
    }

    /// Predicts every row of `data` in parallel.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<CdfPrediction>> {
        let nbs = self.tree.query_batch(&data.matrix(), self.k, self.metric)?;
        Ok(nbs
            .iter()
            .map(|nb| neighbors_cdf(&self.tree, &nb.indices))
            .collect())
    }
}

impl Predictor for KnnPredictor {
    /// Panics if `features` has the wrong length; check the schema first.
    fn predict(&self, features: &[f64]) -> CdfPrediction {
        let nb = self
            .tree
            .query(features, self.k, self.metric)
            .expect("query dimension checked by caller");
        neighbors_cdf(&self.tree, &nb.indices)
    }
}

/// Per-column centring and scaling fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let d = data.dim();
        let n = data.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in &data.rows {
            for (m, v) in mean.iter_mut().zip(&row.values) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in &data.rows {
            for ((s, v), m) in var.iter_mut().zip(&row.values).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .iter()
            .map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for row in out.rows.iter_mut() {
            for ((v, m), s) in row.values.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::train_histogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, m: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
        let pts = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..m).map(|_| rng.random_range(0.0..20.0)).collect();
        (pts, labels)
    }

    #[test]
    fn hand_checked_query() {
        let tree = KdTree::build(&[0.0, 1.0, 10.0], &[0.0; 3], 1).unwrap();
        let nb = query_knn(&tree, &[0.4], 2, 2.0).unwrap();
        assert_eq!(nb.indices, vec![0, 1]);
        assert!((nb.distances[0] - 0.4).abs() < 1e-15);
        assert!((nb.distances[1] - 0.6).abs() < 1e-15);
        let bf = brute_force_knn(&[0.0, 1.0, 10.0], 1, &[0.4], 2, 2.0).unwrap();
        assert_eq!(bf, nb);

        let all = query_knn(&tree, &[0.4], 3, 2.0).unwrap();
        assert_eq!(all.indices, vec![0, 1, 2]);
    }

    #[test]
    fn single_point_tree() {
        let tree = KdTree::build(&[3.0, 4.0], &[1.0], 16).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.traversal_count(), 1);
        let nb = query_knn(&tree, &[0.0, 0.0], 1, 2.0).unwrap();
        assert_eq!(nb.indices, vec![0]);
        assert_eq!(nb.distances, vec![5.0]);
        let bf = brute_force_knn(&[3.0, 4.0], 2, &[0.0, 0.0], 1, 2.0).unwrap();
        assert_eq!(bf, nb);
    }

    #[test]
    fn duplicates_and_ties() {
        let pts = [1.0, 1.0].repeat(5);
        let tree = KdTree::build(&pts, &[0.0; 5], 1).unwrap();
        let nb = query_knn(&tree, &[1.0, 1.0], 5, 2.0).unwrap();
        assert_eq!(nb.indices, vec![0, 1, 2, 3, 4]);
        assert!(nb.distances.iter().all(|&d| d == 0.0));
        let two = query_knn(&tree, &[0.0, 0.0], 2, 1.0).unwrap();
        assert_eq!(two.indices, vec![0, 1]);
    }

    #[test]
    fn equidistant_corners_break_ties_by_index() {
        // Unit simplex corners seen from the centroid.
        let pts = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let c = 1.0 / 3.0;
        for p in [1.0, 2.0, f64::INFINITY] {
            let bf = brute_force_knn(&pts, 3, &[c, c, c], 2, p).unwrap();
            assert_eq!(bf.indices, vec![0, 1]);
            let tree = KdTree::build(&pts, &[0.0; 3], 1).unwrap();
            assert_eq!(query_knn(&tree, &[c, c, c], 2, p).unwrap(), bf);
        }
    }

    #[test]
    fn size_and_metric_errors() {
        let tree = KdTree::build(&[0.0, 1.0], &[0.0, 0.0], 1).unwrap();
        assert!(matches!(query_knn(&tree, &[0.0], 0, 2.0), Err(Error::Size(_))));
        assert!(matches!(query_knn(&tree, &[0.0], 3, 2.0), Err(Error::Size(_))));
        assert!(matches!(query_knn(&tree, &[0.0, 1.0], 1, 2.0), Err(Error::Shape(_))));
        assert!(matches!(query_knn(&tree, &[0.0], 1, 0.5), Err(Error::Config(_))));
        assert!(matches!(KdTree::build(&[], &[], 1), Err(Error::Data(_))));
        assert!(matches!(
            KdTree::build(&[0.0, f64::NAN], &[0.0, 0.0], 1),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pts, labels) = random_points(&mut rng, 400, 3);
        for leaf in [1, 4, 16] {
            let tree = KdTree::build(&pts, &labels, leaf).unwrap();
            tree.validate().unwrap();
            for _ in 0..30 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.2..1.2)).collect();
                for k in [1, 7, 60] {
                    for p in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
                        let a = query_knn(&tree, &x, k, p).unwrap();
                        let b = brute_force_knn(&pts, 3, &x, k, p).unwrap();
                        assert_eq!(a.indices, b.indices);
                        assert!(a.distances.windows(2).all(|w| w[0] <= w[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn gridded_ties_match_brute_force() {
        // Integer lattice points produce many exact distance ties.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<f64> = (0..600).map(|_| rng.random_range(0..4) as f64).collect();
        let labels = vec![0.0; 300];
        let tree = KdTree::build(&pts, &labels, 3).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(0..4) as f64).collect();
            for k in [1, 5, 40, 300] {
                for p in [1.0, 2.0, f64::INFINITY] {
                    assert_eq!(
                        query_knn(&tree, &x, k, p).unwrap().indices,
                        brute_force_knn(&pts, 2, &x, k, p).unwrap().indices
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_invariance_for_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, labels) = random_points(&mut rng, 300, 2);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let rotated: Vec<f64> = pts.chunks(2).flat_map(rot).collect();
        let a = KdTree::build(&pts, &labels, 8).unwrap();
        let b = KdTree::build(&rotated, &labels, 8).unwrap();
        for _ in 0..20 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let na = query_knn(&a, &x, 10, 2.0).unwrap();
            let nb = query_knn(&b, &rot(&x), 10, 2.0).unwrap();
            for (da, db) in na.distances.iter().zip(&nb.distances) {
                assert!((da - db).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_histogram_prediction() {
        let tree = KdTree::build(&[0.0, 1.0, 2.0, 3.0, 50.0], &[0.0, 0.0, 2.0, 5.5, 9.0], 2).unwrap();
        let p = knn_predict(&tree, &[1.5], 4, 2.0).unwrap();
        assert_eq!(&p.probs()[..2], &[0.5, 0.5]);
        assert!(p.probs()[2..6].iter().all(|&v| v == 0.75));
        assert!(p.probs()[6..].iter().all(|&v| v == 1.0));
        assert_eq!(knn_predict(&tree, &[0.0], 1, 2.0).unwrap(), CdfPrediction::ones());
    }

    #[test]
    fn k_equals_m_is_the_global_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pts, labels) = random_points(&mut rng, 200, 2);
        let tree = KdTree::build(&pts, &labels, 16).unwrap();
        let global = train_histogram(&labels).unwrap().cdf;
        for _ in 0..5 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_eq!(knn_predict(&tree, &x, 200, 2.0).unwrap(), global);
        }
    }

    #[test]
    fn traversal_visits_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pts, labels) = random_points(&mut rng, 5_000, 4);
        let tree = KdTree::build(&pts, &labels, 16).unwrap();
        assert_eq!(tree.traversal_count(), 5_000);
        tree.validate().unwrap();
    }

    #[test]
    fn binary_round_trip_and_version_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (pts, labels) = random_points(&mut rng, 100, 3);
        let tree = KdTree::build(&pts, &labels, 4).unwrap();
        let mut bytes = Vec::new();
        tree.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"RAINKD01");
        assert_eq!(KdTree::read_from(bytes.as_slice()).unwrap(), tree);

        let mut future = bytes.clone();
        future[7] = b'2';
        assert!(matches!(KdTree::read_from(future.as_slice()), Err(Error::Data(_))));
        assert!(KdTree::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(KdTree::read_from(extra.as_slice()).is_err());
    }

    #[test]
    fn standardizer_centres_columns() {
        let data = Dataset::new(
            vec!["a".into(), "b".into()],
            (0..10)
                .map(|i| crate::ingest::FeatureVector {
                    values: vec![i as f64, 5.0],
                    label: Some(0.0),
                })
                .collect(),
        )
        .unwrap();
        let z = Standardizer::fit(&data).apply(&data);
        let mean: f64 = z.rows.iter().map(|r| r.values[0]).sum::<f64>() / 10.0;
        assert!(mean.abs() < 1e-12);
        assert!(z.rows.iter().all(|r| r.values[1] == 0.0));
    }
}
