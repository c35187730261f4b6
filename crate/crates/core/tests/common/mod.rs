#![allow(dead_code)]

use rand::Rng;
use ricci_gsl::graph::{make_synthetic, Synthetic};
use ricci_gsl::Graph;

/// Every connected labeled graph on `2..=max_n` nodes.
pub fn connected_graphs_up_to(max_n: usize) -> Vec<Graph> {
    let mut out = Vec::new();
    for n in 2..=max_n {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 1u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize, f64)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &(i, j))| (i, j, 1.0))
                .collect();
            let g = Graph::from_edges(n, &edges).unwrap();
            if g.is_connected() {
                out.push(g);
            }
        }
    }
    out
}

/// Complete graphs, cycles, paths and barbells with at most `max_n` nodes.
pub fn named_families(max_n: usize) -> Vec<(String, Graph)> {
    let mut kinds = Vec::new();
    for n in 2..=max_n {
        kinds.push(Synthetic::Complete(n));
        kinds.push(Synthetic::Path(n));
        if n >= 3 {
            kinds.push(Synthetic::Cycle(n));
        }
    }
    for k in 2..=max_n / 2 {
        kinds.push(Synthetic::Barbell(k));
    }
    kinds
        .into_iter()
        .map(|k| (format!("{k:?}"), make_synthetic(&k, 0).unwrap()))
        .collect()
}

/// A connected graph on `n` nodes: a random spanning tree plus extra edges
/// with probability `p`.
pub fn random_connected(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v, 1.0));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p && !edges.iter().any(|&(a, b, _)| (a, b) == (i, j)) {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}
