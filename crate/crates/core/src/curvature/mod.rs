//! Ollivier-Ricci curvature: the exact optimal-transport oracle and the
//! differentiable surrogate used for training.

mod differentiable;
mod ot;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_alpha, hop_ground_matrix, length_ground_matrix, Graph};

pub use differentiable::{diff_ricci_matrix, diff_ricci_values, lipschitz_normalize, AffineMap, AffineVars};
pub use ot::{solve_transport, Transport};

/// Largest graph for which all edges are evaluated exactly.
pub const EXACT_EDGE_LIMIT: usize = 2000;
/// Largest graph for which all connected pairs are evaluated exactly.
pub const EXACT_PAIR_LIMIT: usize = 200;

/// How edge weights enter the random walk and the ground metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSemantics {
    /// Weights are affinities: walk mass proportional to weight, ground
    /// distance in hops.
    #[default]
    Affinity,
    /// Weights are lengths: walk mass proportional to `1/ℓ`, ground distance
    /// is the weighted shortest path.
    Length,
}

impl EdgeSemantics {
    pub fn ground_matrix(self, g: &Graph) -> Array2<f64> {
        match self {
            EdgeSemantics::Affinity => hop_ground_matrix(g),
            EdgeSemantics::Length => length_ground_matrix(g),
        }
    }

    fn affinity(self, w: f64) -> f64 {
        match self {
            EdgeSemantics::Affinity => w,
            EdgeSemantics::Length => 1.0 / w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution {
    pub support: Vec<(usize, f64)>,
}

impl MassDistribution {
    pub fn mass_at(&self, node: usize) -> f64 {
        self.support
            .iter()
            .filter(|(v, _)| *v == node)
            .map(|(_, m)| m)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, m)| m).sum()
    }
}

/// `alpha` at `u`, the rest spread over neighbors proportionally to edge
/// weight. Isolated nodes keep all their mass.
pub fn mass_distribution(g: &Graph, u: usize, alpha: f64) -> Result<MassDistribution> {
    mass_distribution_with(g, u, alpha, EdgeSemantics::Affinity)
}

pub fn mass_distribution_with(
    g: &Graph,
    u: usize,
    alpha: f64,
    semantics: EdgeSemantics,
) -> Result<MassDistribution> {
    check_alpha(alpha)?;
    if u >= g.n() {
        return Err(Error::NodeOutOfRange { index: u, n: g.n() });
    }
    let nbrs: Vec<(usize, f64)> = g
        .neighbors(u)
        .map(|(v, w)| (v, semantics.affinity(w)))
        .collect();
    let total: f64 = nbrs.iter().map(|(_, a)| a).sum();
    if nbrs.is_empty() || total <= 0.0 {
        return Ok(MassDistribution {
            support: vec![(u, 1.0)],
        });
    }
    let mut support = Vec::with_capacity(nbrs.len() + 1);
    if alpha > 0.0 {
        support.push((u, alpha));
    }
    if alpha < 1.0 {
        support.extend(nbrs.into_iter().map(|(v, a)| (v, (1.0 - alpha) * a / total)));
    }
    Ok(MassDistribution { support })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    /// Value of the certifying dual solution; equals `cost` up to roundoff.
    pub dual: f64,
}

/// Exact 1-Wasserstein distance between two distributions under `ground`.
pub fn wasserstein(
    p: &MassDistribution,
    q: &MassDistribution,
    ground: impl Fn(usize, usize) -> f64,
) -> Result<TransportPlan> {
    let supply: Vec<f64> = p.support.iter().map(|(_, m)| *m).collect();
    let demand: Vec<f64> = q.support.iter().map(|(_, m)| *m).collect();
    let cost = Array2::from_shape_fn((supply.len(), demand.len()), |(a, b)| {
        ground(p.support[a].0, q.support[b].0)
    });
    let t = solve_transport(&supply, &demand, &cost)?;
    let mut entries = Vec::new();
    for ((a, b), &x) in t.flow.indexed_iter() {
        if x > 0.0 {
            entries.push((p.support[a].0, q.support[b].0, x));
        }
    }
    Ok(TransportPlan {
        entries,
        cost: t.cost,
        dual: t.dual_objective(&supply, &demand),
    })
}

/// `1 - W(m_i, m_j) / d(i, j)` with hop distance as the ground metric.
pub fn ollivier_ricci(g: &Graph, i: usize, j: usize, alpha: f64) -> Result<f64> {
    let ground = hop_ground_matrix(g);
    pair_curvature(g, &ground, i, j, alpha, EdgeSemantics::Affinity)
}

/// Exact curvature of one pair against a precomputed ground matrix.
pub fn pair_curvature(
    g: &Graph,
    ground: &Array2<f64>,
    i: usize,
    j: usize,
    alpha: f64,
    semantics: EdgeSemantics,
) -> Result<f64> {
    let n = g.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::NodeOutOfRange { index: idx, n });
        }
    }
    if i == j {
        return Err(Error::InvalidParameter(format!(
            "curvature of the self pair ({i}, {i})"
        )));
    }
    let comp = g.components();
    if comp[i] != comp[j] {
        return Err(Error::Disconnected(i, j));
    }
    let mi = mass_distribution_with(g, i, alpha, semantics)?;
    let mj = mass_distribution_with(g, j, alpha, semantics)?;
    let w = wasserstein(&mi, &mj, |a, b| ground[[a, b]])?;
    Ok(1.0 - w.cost / ground[[i, j]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    EdgesOnly,
    AllConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    Exact,
    Differentiable,
}

/// Pairwise curvature values. Pairs that were not evaluated hold NaN; use
/// [`RicciMatrix::get`] to read them as options.
#[derive(Debug, Clone, PartialEq)]
pub struct RicciMatrix {
    pub values: Array2<f64>,
    pub kind: CurvatureKind,
    pub alpha: f64,
}

impl RicciMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[[i, j]];
        (!v.is_nan()).then_some(v)
    }

    /// Values on the edges of `g` with `i < j`.
    pub fn on_edges(&self, g: &Graph) -> Vec<(usize, usize, f64)> {
        g.edges()
            .into_iter()
            .filter_map(|(i, j, _)| self.get(i, j).map(|v| (i, j, v)))
            .collect()
    }

    /// Smallest strictly positive edge curvature, if any edge is positive.
    pub fn min_positive_on_edges(&self, g: &Graph) -> Option<f64> {
        self.on_edges(g)
            .into_iter()
            .map(|(_, _, v)| v)
            .filter(|&v| v > 0.0)
            .min_by(f64::total_cmp)
    }
}

pub fn ricci_matrix_exact(g: &Graph, alpha: f64, pairs: PairSet) -> Result<RicciMatrix> {
    ricci_matrix_exact_with(g, alpha, pairs, EdgeSemantics::Affinity)
}

pub fn ricci_matrix_exact_with(
    g: &Graph,
    alpha: f64,
    pairs: PairSet,
    semantics: EdgeSemantics,
) -> Result<RicciMatrix> {
    check_alpha(alpha)?;
    let n = g.n();
    let limit = match pairs {
        PairSet::EdgesOnly => EXACT_EDGE_LIMIT,
        PairSet::AllConnected => EXACT_PAIR_LIMIT,
    };
    if n > limit {
        return Err(Error::SizeGuard {
            what: "exact curvature graph",
            actual: n,
            limit,
        });
    }
    let ground = semantics.ground_matrix(g);
    let comp = g.components();
    let masses: Vec<MassDistribution> = (0..n)
        .map(|u| mass_distribution_with(g, u, alpha, semantics))
        .collect::<Result<_>>()?;
    let mut values = Array2::from_elem((n, n), f64::NAN);
    let mut eval = |i: usize, j: usize| -> Result<()> {
        let w = wasserstein(&masses[i], &masses[j], |a, b| ground[[a, b]])?;
        let v = 1.0 - w.cost / ground[[i, j]];
        values[[i, j]] = v;
        values[[j, i]] = v;
        Ok(())
    };
    match pairs {
        PairSet::EdgesOnly => {
            for (i, j, _) in g.edges() {
                eval(i, j)?;
            }
        }
        PairSet::AllConnected => {
            for i in 0..n {
                for j in (i + 1)..n {
                    if comp[i] == comp[j] {
                        eval(i, j)?;
                    }
                }
            }
        }
    }
    Ok(RicciMatrix {
        values,
        kind: CurvatureKind::Exact,
        alpha,
    })
}
