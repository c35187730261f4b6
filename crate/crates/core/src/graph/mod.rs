//! Dense weighted undirected graphs.
//!
//! Adjacency is stored as a dense `N x N` matrix. The quadratic memory is the
//! same order as the learned structure itself, so nothing is gained by going
//! sparse below the node cap [`MAX_NODES`].

pub mod io;
mod synthetic;

use std::collections::{BinaryHeap, VecDeque};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{export_graph, load_graph, ExportFormat, GraphFormat};
pub use synthetic::{make_synthetic, Synthetic, KARATE_EDGES, KARATE_LABELS};

/// Largest graph accepted by the dense representation.
pub const MAX_NODES: usize = 4000;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<f64>,
    features: Option<Array2<f64>>,
    labels: Option<Vec<usize>>,
    splits: Option<Splits>,
}

impl Graph {
    /// Builds a graph from a dense adjacency matrix. The matrix must be
    /// square, symmetric, nonnegative, finite and have a zero diagonal.
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(Error::InvalidGraph(format!("adjacency is {r} x {c}")));
        }
        if r > MAX_NODES {
            return Err(Error::SizeGuard {
                what: "graph",
                actual: r,
                limit: MAX_NODES,
            });
        }
        for i in 0..r {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::InvalidGraph(format!("nonzero diagonal at node {i}")));
            }
            for j in (i + 1)..r {
                let (a, b) = (adjacency[[i, j]], adjacency[[j, i]]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "entry ({i}, {j}) = {a} is not a nonnegative number"
                    )));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::WeightConflict {
                        i,
                        j,
                        w_ij: a,
                        w_ji: b,
                    });
                }
            }
        }
        Ok(Graph {
            adjacency,
            features: None,
            labels: None,
            splits: None,
        })
    }

    /// Builds a graph from an undirected weighted edge list. Repeated pairs in
    /// either orientation are merged by taking the larger weight; self loops
    /// are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n > MAX_NODES {
            return Err(Error::SizeGuard {
                what: "graph",
                actual: n,
                limit: MAX_NODES,
            });
        }
        let mut adjacency = Array2::zeros((n, n));
        for &(i, j, w) in edges {
            for idx in [i, j] {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) has invalid weight {w}"
                )));
            }
            if i == j {
                continue;
            }
            let merged = f64::max(adjacency[[i, j]], w);
            adjacency[[i, j]] = merged;
            adjacency[[j, i]] = merged;
        }
        Graph::from_adjacency(adjacency)
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.n()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        let n = self.n();
        let mut owner = vec![None; n];
        for (name, set) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &idx in set {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
                if let Some(prev) = owner[idx] {
                    return Err(Error::InvalidGraph(format!(
                        "node {idx} is in both {prev} and {name} splits"
                    )));
                }
                owner[idx] = Some(name);
            }
        }
        self.splits = Some(splits);
        Ok(self)
    }

    /// Replaces the adjacency, keeping features, labels and splits.
    pub fn with_adjacency(&self, adjacency: Array2<f64>) -> Result<Self> {
        if adjacency.dim() != self.adjacency.dim() {
            return Err(Error::DimensionMismatch(format!(
                "adjacency {:?} for graph of {} nodes",
                adjacency.dim(),
                self.n()
            )));
        }
        let mut g = Graph::from_adjacency(adjacency)?;
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        g.splits = self.splits.clone();
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[[i, j]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[[i, j]] > 0.0
    }

    /// Weighted degree (row sum).
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).sum()
    }

    pub fn degrees(&self) -> Array1<f64> {
        self.adjacency.sum_axis(ndarray::Axis(1))
    }

    /// Neighbors of `i` with their edge weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency
            .row(i)
            .into_iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| (j, *w))
    }

    /// Neighbor lists with weights, in increasing neighbor order.
    pub fn adjacency_lists(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n()).map(|i| self.neighbors(i).collect()).collect()
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency[[i, j]];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn num_components(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }

    /// Connected component id per node, ids assigned in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for (v, _) in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.n() == 0 || self.components().iter().all(|&c| c == 0)
    }

    /// Induced subgraph on `nodes` (in the given order). Splits are remapped
    /// and nodes outside `nodes` dropped from them.
    pub fn subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let n = self.n();
        let mut remap = vec![usize::MAX; n];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= n {
                return Err(Error::NodeOutOfRange { index: old, n });
            }
            remap[old] = new;
        }
        let k = nodes.len();
        let mut adjacency = Array2::zeros((k, k));
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adjacency[[a, b]] = self.adjacency[[i, j]];
            }
        }
        let mut g = Graph::from_adjacency(adjacency)?;
        if let Some(f) = &self.features {
            g = g.with_features(f.select(ndarray::Axis(0), nodes))?;
        }
        if let Some(l) = &self.labels {
            g = g.with_labels(nodes.iter().map(|&i| l[i]).collect())?;
        }
        if let Some(s) = &self.splits {
            let map = |set: &[usize]| -> Vec<usize> {
                set.iter()
                    .filter(|&&i| remap[i] != usize::MAX)
                    .map(|&i| remap[i])
                    .collect()
            };
            g = g.with_splits(Splits {
                train: map(&s.train),
                val: map(&s.val),
                test: map(&s.test),
            })?;
        }
        Ok(g)
    }

    /// Largest connected component and the original index of each kept node.
    /// Ties go to the component containing the smallest node index.
    pub fn largest_component(&self) -> Result<(Graph, Vec<usize>)> {
        let comp = self.components();
        let count = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &c in &comp {
            sizes[c] += 1;
        }
        let best = (0..count).max_by_key(|&c| (sizes[c], usize::MAX - c));
        let nodes: Vec<usize> = match best {
            Some(b) => (0..self.n()).filter(|&i| comp[i] == b).collect(),
            None => Vec::new(),
        };
        Ok((self.subgraph(&nodes)?, nodes))
    }
}

/// Row-stochastic lazy random-walk operator `alpha * I + (1 - alpha) * D^-1 A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LazyWalkLaplacian {
    pub alpha: f64,
    pub matrix: Array2<f64>,
}

/// Isolated nodes get an identity row so mass stays in place.
pub fn lazy_walk_laplacian(g: &Graph, alpha: f64) -> Result<LazyWalkLaplacian> {
    check_alpha(alpha)?;
    Ok(LazyWalkLaplacian {
        alpha,
        matrix: lazy_walk_matrix(g.adjacency(), alpha),
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must lie in [0, 1]"
        )));
    }
    Ok(())
}

pub(crate) fn lazy_walk_matrix(adjacency: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let n = adjacency.nrows();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let deg: f64 = adjacency.row(i).sum();
        if deg <= 0.0 {
            m[[i, i]] = 1.0;
            continue;
        }
        for j in 0..n {
            m[[i, j]] = (1.0 - alpha) * adjacency[[i, j]] / deg;
        }
        m[[i, i]] += alpha;
    }
    m
}

/// Unweighted shortest-path hop count; `f64::INFINITY` when disconnected.
pub fn hop_distance(g: &Graph, i: usize, j: usize) -> f64 {
    hop_distances_from(g, i)[j]
}

/// BFS hop counts from `src` to every node.
pub fn hop_distances_from(g: &Graph, src: usize) -> Vec<f64> {
    bfs(&g.adjacency_lists(), src)
}

/// Dijkstra distances from `src`, treating edge weights as lengths.
pub fn path_lengths_from(g: &Graph, src: usize) -> Vec<f64> {
    dijkstra(&g.adjacency_lists(), src)
}

type Lists = [Vec<(usize, f64)>];

fn bfs(lists: &Lists, src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; lists.len()];
    dist[src] = 0.0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &lists[u] {
            if dist[v].is_infinite() {
                dist[v] = dist[u] + 1.0;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn dijkstra(lists: &Lists, src: usize) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }

    let mut dist = vec![f64::INFINITY; lists.len()];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, src)]);
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in &lists[u] {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

/// All-pairs hop distances with disconnected pairs set to `10 * n`, a finite
/// value that dominates any real path.
pub fn hop_ground_matrix(g: &Graph) -> Array2<f64> {
    ground_matrix(g, bfs)
}

/// All-pairs weighted path lengths with the same disconnected sentinel as
/// [`hop_ground_matrix`], scaled by the longest finite path.
pub fn length_ground_matrix(g: &Graph) -> Array2<f64> {
    ground_matrix(g, dijkstra)
}

fn ground_matrix(g: &Graph, from: fn(&Lists, usize) -> Vec<f64>) -> Array2<f64> {
    let n = g.n();
    let lists = g.adjacency_lists();
    let mut out = Array2::zeros((n, n));
    let mut longest: f64 = 1.0;
    for i in 0..n {
        for (j, d) in from(&lists, i).into_iter().enumerate() {
            out[[i, j]] = d;
            if d.is_finite() {
                longest = longest.max(d);
            }
        }
    }
    let sentinel = 10.0 * n as f64 * longest;
    out.mapv_inplace(|d| if d.is_finite() { d } else { sentinel });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn lazy_walk_on_k2() {
        let g = Graph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let l = lazy_walk_laplacian(&g, 0.5).unwrap();
        assert_eq!(l.matrix, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn lazy_walk_degree_two_row() {
        let g = path(3);
        let l = lazy_walk_laplacian(&g, 0.5).unwrap();
        assert_eq!(l.matrix.row(1).to_vec(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn full_laziness_is_identity() {
        let g = make_synthetic(&Synthetic::Karate, 0).unwrap();
        let l = lazy_walk_laplacian(&g, 1.0).unwrap();
        assert_eq!(l.matrix, Array2::<f64>::eye(34));
    }

    #[test]
    fn isolated_node_keeps_mass() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let l = lazy_walk_laplacian(&g, 0.3).unwrap();
        assert_eq!(l.matrix.row(2).to_vec(), vec![0.0, 0.0, 1.0]);
        for i in 0..3 {
            assert!((l.matrix.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_out_of_range() {
        let g = path(3);
        assert!(lazy_walk_laplacian(&g, 1.5).is_err());
    }

    #[test]
    fn hop_distance_examples() {
        let g = path(4);
        assert_eq!(hop_distance(&g, 2, 2), 0.0);
        assert_eq!(hop_distance(&g, 1, 2), 1.0);
        assert_eq!(hop_distance(&g, 0, 3), 3.0);
        let split = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        assert!(hop_distance(&split, 0, 2).is_infinite());
        assert_eq!(hop_ground_matrix(&split)[[0, 2]], 30.0);
    }

    #[test]
    fn dijkstra_prefers_short_detour() {
        let g = Graph::from_edges(3, &[(0, 1, 5.0), (0, 2, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(path_lengths_from(&g, 0), vec![0.0, 2.0, 1.0]);
    }

    #[test]
    fn rejects_bad_adjacency() {
        assert!(matches!(
            Graph::from_adjacency(array![[0.0, 1.0], [0.5, 0.0]]),
            Err(Error::WeightConflict { i: 0, j: 1, .. })
        ));
        assert!(Graph::from_adjacency(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(Graph::from_adjacency(array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
        assert!(matches!(
            Graph::from_edges(2, &[(0, 2, 1.0)]),
            Err(Error::NodeOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let g = path(4);
        let s = Splits {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(g.with_splits(s).is_err());
    }

    #[test]
    fn largest_component_extraction() {
        let g = Graph::from_edges(5, &[(0, 1, 1.0), (2, 3, 1.0), (3, 4, 1.0)])
            .unwrap()
            .with_labels(vec![0, 0, 1, 1, 1])
            .unwrap();
        assert!(!g.is_connected());
        let (sub, kept) = g.largest_component().unwrap();
        assert_eq!(kept, vec![2, 3, 4]);
        assert_eq!(sub.num_edges(), 2);
        assert!(sub.is_connected());
        assert_eq!(sub.labels().unwrap(), &[1, 1, 1]);
    }
}
