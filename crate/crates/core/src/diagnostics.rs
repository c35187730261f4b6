//! Over-squashing diagnostics: normalized-Laplacian spectral gap, the exact
//! Cheeger constant of small graphs, and the chain `2h ≥ λ₁ ≥ κ₀` relating
//! them to the smallest positive edge curvature.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::curvature::{ricci_matrix_exact, PairSet, EXACT_EDGE_LIMIT};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest graph for the exhaustive Cheeger search.
pub const CHEEGER_LIMIT: usize = 20;
/// Above this size the gap comes from Lanczos instead of a dense solve.
pub const DENSE_EIGEN_LIMIT: usize = 500;
/// Slack on the non-strict inequality checks.
const CHAIN_SLACK: f64 = 1e-9;
const ZERO_EIGEN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenSolver {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Smallest nonzero eigenvalue of `I - D^{-1/2} A D^{-1/2}`. Disconnected
/// graphs are measured on their largest component, with a warning.
pub fn spectral_gap(g: &Graph) -> Result<f64> {
    spectral_gap_with(g, EigenSolver::Auto)
}

pub fn spectral_gap_with(g: &Graph, solver: EigenSolver) -> Result<f64> {
    if g.n() == 0 {
        return Err(Error::InvalidGraph("spectral gap of an empty graph".into()));
    }
    if !g.is_connected() {
        let (sub, _) = g.largest_component()?;
        warn!(
            "graph has {} components; spectral gap taken on the largest ({} of {} nodes)",
            g.num_components(),
            sub.n(),
            g.n()
        );
        return spectral_gap_with(&sub, solver);
    }
    if g.n() == 1 {
        return Ok(0.0);
    }
    let dense = match solver {
        EigenSolver::Auto => g.n() <= DENSE_EIGEN_LIMIT,
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
    };
    if dense {
        let spectrum = laplacian_spectrum(g.adjacency());
        Ok(spectrum.into_iter().find(|&l| l > ZERO_EIGEN).unwrap_or(0.0))
    } else {
        Ok(lanczos_gap(g))
    }
}

/// Full normalized-Laplacian spectrum in ascending order. Zero-degree nodes
/// contribute eigenvalue 1. On a disjoint union the second entry is 0.
pub fn laplacian_spectrum(adjacency: &Array2<f64>) -> Vec<f64> {
    let s = normalized_adjacency(adjacency);
    let n = s.nrows();
    let l = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - s[[i, j]]);
    let mut eig: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

fn normalized_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let dinv: Array1<f64> = a
        .rows()
        .into_iter()
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut s = a.clone();
    for ((i, j), v) in s.indexed_iter_mut() {
        *v *= dinv[i] * dinv[j];
    }
    s
}

/// Lanczos with full reorthogonalization on the complement of the known null
/// vector `D^{1/2} 1`, returning the smallest Ritz value.
fn lanczos_gap(g: &Graph) -> f64 {
    let s = normalized_adjacency(g.adjacency());
    let n = s.nrows();
    let apply = |x: &Array1<f64>| x - &s.dot(x);

    let mut null: Array1<f64> = g.degrees().mapv(f64::sqrt);
    null /= null.dot(&null).sqrt();
    let orthogonalize = |w: &mut Array1<f64>, basis: &[Array1<f64>]| {
        for _ in 0..2 {
            let c = null.dot(&*w);
            w.scaled_add(-c, &null);
            for q in basis {
                let c = q.dot(&*w);
                w.scaled_add(-c, q);
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut q: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut q, &[]);
    q /= q.dot(&q).sqrt();

    let max_iter = (n - 1).min(600);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(max_iter);
    let mut alphas = Vec::with_capacity(max_iter);
    let mut betas: Vec<f64> = Vec::with_capacity(max_iter);
    let mut best = f64::INFINITY;
    for j in 0..max_iter {
        let mut w = apply(&q);
        let a = q.dot(&w);
        alphas.push(a);
        basis.push(q.clone());
        orthogonalize(&mut w, &basis);
        let b = w.dot(&w).sqrt();
        let done = b < 1e-12 || j + 1 == max_iter;
        if done || (j + 1) % 10 == 0 {
            let k = alphas.len();
            let t = DMatrix::from_fn(k, k, |r, c| {
                if r == c {
                    alphas[r]
                } else if r + 1 == c {
                    betas[r]
                } else if c + 1 == r {
                    betas[c]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (idx, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("nonempty tridiagonal");
            best = theta;
            let residual = b * eig.eigenvectors[(k - 1, idx)].abs();
            if done || residual < ZERO_EIGEN * 0.1 {
                break;
            }
        }
        betas.push(b);
        q = w / b;
    }
    best
}

/// Minimum of `|∂Ω| / min(vol Ω, vol Ω̄)` over nonempty proper subsets, by Gray-code
/// enumeration. Returns the value and one minimizing subset.
pub fn cheeger_exact(g: &Graph) -> Result<(f64, Vec<usize>)> {
    let n = g.n();
    if n > CHEEGER_LIMIT {
        return Err(Error::SizeGuard {
            what: "exhaustive Cheeger search nodes",
            actual: n,
            limit: CHEEGER_LIMIT,
        });
    }
    if n < 2 {
        return Err(Error::InvalidGraph("Cheeger constant needs at least two nodes".into()));
    }
    let a = g.adjacency();
    let deg = g.degrees();
    let total: f64 = deg.sum();
    // The last node stays outside Ω; the ratio is symmetric under complement.
    let free = n - 1;
    let mut inside = vec![false; n];
    let mut weight_to_inside = vec![0.0; n];
    let (mut vol, mut boundary) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 0u64);
    let mut mask = 0u64;
    for step in 1u64..(1u64 << free) {
        let v = step.trailing_zeros() as usize;
        let entering = !inside[v];
        inside[v] = entering;
        mask ^= 1 << v;
        let sign = if entering { 1.0 } else { -1.0 };
        // Edges to the outside become boundary; edges into Ω stop being boundary.
        let to_outside = deg[v] - weight_to_inside[v];
        boundary += sign * (to_outside - weight_to_inside[v]);
        vol += sign * deg[v];
        for u in 0..n {
            weight_to_inside[u] += sign * a[[u, v]];
        }
        let denom = vol.min(total - vol);
        if denom > 0.0 {
            let h = boundary / denom;
            if h < best.0 - 1e-15 {
                best = (h, mask);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::InvalidGraph("Cheeger constant of a graph without edges".into()));
    }
    let witness = (0..free).filter(|&i| best.1 >> i & 1 == 1).collect();
    Ok((best.0.max(0.0), witness))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheegerCut {
    pub value: f64,
    pub witness: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OversquashReport {
    pub nodes: usize,
    pub spectral_gap: f64,
    pub cheeger_exact: Option<CheegerCut>,
    pub cheeger_lower: f64,
    pub min_positive_edge_curvature: Option<f64>,
    /// `2h ≥ λ₁`, when `h` is known exactly.
    pub cheeger_bound_holds: Option<bool>,
    /// `λ₁ ≥ κ₀`, checked only when every edge is positively curved (the
    /// regime where the bound is a theorem).
    pub curvature_bound_holds: Option<bool>,
}

impl OversquashReport {
    pub fn of(g: &Graph, alpha: f64) -> Result<Self> {
        let gap = spectral_gap(g)?;
        let cheeger = if g.n() <= CHEEGER_LIMIT && g.num_edges() > 0 {
            let (value, witness) = cheeger_exact(g)?;
            Some(CheegerCut { value, witness })
        } else {
            None
        };
        let (kappa0, all_positive) = if g.num_edges() <= EXACT_EDGE_LIMIT && g.num_edges() > 0 {
            let ric = ricci_matrix_exact(g, alpha, PairSet::EdgesOnly)?;
            let all_positive = ric.on_edges(g).iter().all(|e| e.2 > 0.0);
            (ric.min_positive_on_edges(g), all_positive)
        } else {
            (None, false)
        };
        Ok(OversquashReport {
            nodes: g.n(),
            spectral_gap: gap,
            cheeger_lower: gap / 2.0,
            cheeger_bound_holds: cheeger.as_ref().map(|c| 2.0 * c.value >= gap - CHAIN_SLACK),
            curvature_bound_holds: kappa0
                .filter(|_| all_positive)
                .map(|k| gap >= k - CHAIN_SLACK),
            cheeger_exact: cheeger,
            min_positive_edge_curvature: kappa0,
        })
    }

    /// Exact Cheeger value when known, otherwise the spectral lower bound.
    pub fn cheeger_estimate(&self) -> f64 {
        self.cheeger_exact.as_ref().map_or(self.cheeger_lower, |c| c.value)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OversquashComparison {
    pub before: OversquashReport,
    pub after: OversquashReport,
    pub delta_spectral_gap: f64,
    pub delta_cheeger: f64,
    /// Whether `delta_cheeger` compares exact values rather than lower bounds.
    pub delta_cheeger_exact: bool,
}

/// Diagnostics of a graph before and after refinement.
pub fn oversquash_report(before: &Graph, after: &Graph, alpha: f64) -> Result<OversquashComparison> {
    if before.n() != after.n() {
        return Err(Error::DimensionMismatch(format!(
            "comparing graphs with {} and {} nodes",
            before.n(),
            after.n()
        )));
    }
    let b = OversquashReport::of(before, alpha)?;
    let a = OversquashReport::of(after, alpha)?;
    let exact = b.cheeger_exact.is_some() && a.cheeger_exact.is_some();
    let delta_cheeger = if exact {
        a.cheeger_estimate() - b.cheeger_estimate()
    } else {
        a.cheeger_lower - b.cheeger_lower
    };
    Ok(OversquashComparison {
        delta_spectral_gap: a.spectral_gap - b.spectral_gap,
        delta_cheeger,
        delta_cheeger_exact: exact,
        before: b,
        after: a,
    })
}
