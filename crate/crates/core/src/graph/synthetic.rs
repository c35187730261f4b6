use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Zachary's karate club, 0-indexed.
pub const KARATE_EDGES: [(usize, usize); 78] = [
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 10), (0, 11),
    (0, 12), (0, 13), (0, 17), (0, 19), (0, 21), (0, 31), (1, 2), (1, 3), (1, 7), (1, 13),
    (1, 17), (1, 19), (1, 21), (1, 30), (2, 3), (2, 7), (2, 8), (2, 9), (2, 13), (2, 27),
    (2, 28), (2, 32), (3, 7), (3, 12), (3, 13), (4, 6), (4, 10), (5, 6), (5, 10), (5, 16),
    (6, 16), (8, 30), (8, 32), (8, 33), (9, 33), (13, 33), (14, 32), (14, 33), (15, 32),
    (15, 33), (18, 32), (18, 33), (19, 33), (20, 32), (20, 33), (22, 32), (22, 33), (23, 25),
    (23, 27), (23, 29), (23, 32), (23, 33), (24, 25), (24, 27), (24, 31), (25, 31), (26, 29),
    (26, 33), (27, 33), (28, 31), (28, 33), (29, 32), (29, 33), (30, 32), (30, 33), (31, 32),
    (31, 33), (32, 33),
];

/// Faction after the split: 0 = instructor's group, 1 = administrator's.
pub const KARATE_LABELS: [usize; 34] = [
    0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1,
    1, 1, 1, 1,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Synthetic {
    /// Two `K_k` joined by a single bridge between node `k-1` and node `k`.
    Barbell(usize),
    /// Stochastic block model; labels are the block ids.
    Sbm {
        sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
    Karate,
    Complete(usize),
    Cycle(usize),
    Path(usize),
}

pub fn make_synthetic(kind: &Synthetic, seed: u64) -> Result<Graph> {
    match kind {
        Synthetic::Karate => {
            let edges: Vec<_> = KARATE_EDGES.iter().map(|&(i, j)| (i, j, 1.0)).collect();
            Graph::from_edges(34, &edges)?.with_labels(KARATE_LABELS.to_vec())
        }
        Synthetic::Barbell(k) => {
            if *k < 2 {
                return Err(Error::InvalidParameter(format!("barbell clique size {k} < 2")));
            }
            let mut edges = clique_edges(0, *k);
            edges.extend(clique_edges(*k, *k));
            edges.push((k - 1, *k, 1.0));
            let labels = (0..2 * k).map(|i| usize::from(i >= *k)).collect();
            Graph::from_edges(2 * k, &edges)?.with_labels(labels)
        }
        Synthetic::Sbm { sizes, p_in, p_out } => sbm(sizes, *p_in, *p_out, seed),
        Synthetic::Complete(n) => Graph::from_edges(*n, &clique_edges(0, *n)),
        Synthetic::Cycle(n) => {
            if *n < 3 {
                return Err(Error::InvalidParameter(format!("cycle length {n} < 3")));
            }
            let edges: Vec<_> = (0..*n).map(|i| (i, (i + 1) % n, 1.0)).collect();
            Graph::from_edges(*n, &edges)
        }
        Synthetic::Path(n) => {
            let edges: Vec<_> = (1..*n).map(|i| (i - 1, i, 1.0)).collect();
            Graph::from_edges(*n, &edges)
        }
    }
}

fn clique_edges(offset: usize, k: usize) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            edges.push((offset + i, offset + j, 1.0));
        }
    }
    edges
}

fn sbm(sizes: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<Graph> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidParameter(format!("block sizes {sizes:?}")));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("probability {p} not in [0, 1]")));
        }
    }
    let labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            // consume one draw per pair regardless of p so the stream is stable
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::from_edges(n, &edges)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn karate_fixture() {
        let g = make_synthetic(&Synthetic::Karate, 0).unwrap();
        assert_eq!(g.n(), 34);
        assert_eq!(g.num_edges(), 78);
        assert_eq!(g.num_classes(), Some(2));
        assert_eq!(g.degree(0), 16.0);
        assert_eq!(g.degree(33), 17.0);
        assert!(g.is_connected());
    }

    #[test]
    fn barbell_five() {
        let g = make_synthetic(&Synthetic::Barbell(5), 0).unwrap();
        assert_eq!(g.n(), 10);
        assert_eq!(g.num_edges(), 21);
        assert!(g.has_edge(4, 5));
        assert!(!g.has_edge(0, 9));
    }

    #[test]
    fn degenerate_sbm_is_two_cliques() {
        let kind = Synthetic::Sbm {
            sizes: vec![10, 10],
            p_in: 1.0,
            p_out: 0.0,
        };
        let g = make_synthetic(&kind, 7).unwrap();
        assert_eq!(g.num_edges(), 90);
        let comp = g.components();
        assert!(comp[..10].iter().all(|&c| c == 0));
        assert!(comp[10..].iter().all(|&c| c == 1));
    }

    #[test]
    fn sbm_is_seeded() {
        let kind = Synthetic::Sbm {
            sizes: vec![15, 15],
            p_in: 0.5,
            p_out: 0.1,
        };
        let a = make_synthetic(&kind, 3).unwrap();
        assert_eq!(a, make_synthetic(&kind, 3).unwrap());
        assert_ne!(a, make_synthetic(&kind, 4).unwrap());
    }

    #[test]
    fn invalid_parameters() {
        let bad = Synthetic::Sbm {
            sizes: vec![3],
            p_in: 1.5,
            p_out: 0.0,
        };
        assert!(make_synthetic(&bad, 0).is_err());
        assert!(make_synthetic(&Synthetic::Barbell(1), 0).is_err());
    }
}
