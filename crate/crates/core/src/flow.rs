//! Discrete Ricci flow on edge lengths. Weights are read as lengths here:
//! curvature uses `1/ℓ` walk masses and shortest-path ground distance, and the
//! spectral gap is measured on the affinity graph `1/ℓ`.

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::curvature::{ricci_matrix_exact_with, EdgeSemantics, PairSet, RicciMatrix};
use crate::diagnostics::spectral_gap;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const MIN_LENGTH: f64 = 1e-6;
pub const MAX_LENGTH: f64 = 1e6;
/// Largest graph on which every step recomputes exact curvature.
pub const FLOW_NODE_LIMIT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    /// Lengths shrink on positively curved edges, stretch on negative ones.
    Forward,
    /// The reverse: bottlenecks shorten.
    Backward,
}

/// One explicit Euler step `ℓ ← ℓ(1 ∓ Ric·dt)` on every edge.
pub fn flow_step(g: &Graph, ric: &RicciMatrix, dt: f64, direction: FlowDirection) -> Result<Graph> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    let sign = match direction {
        FlowDirection::Forward => -1.0,
        FlowDirection::Backward => 1.0,
    };
    let mut a = g.adjacency().clone();
    let mut worst: f64 = 0.0;
    let mut updates = Vec::with_capacity(g.num_edges());
    for (i, j, len) in g.edges() {
        let r = ric.get(i, j).ok_or_else(|| {
            Error::InvalidParameter(format!("curvature matrix has no entry for edge ({i}, {j})"))
        })?;
        worst = worst.max(r.abs());
        updates.push((i, j, (len * (1.0 + sign * r * dt)).clamp(MIN_LENGTH, MAX_LENGTH)));
    }
    if worst * dt >= 1.0 {
        return Err(Error::Unstable(worst * dt));
    }
    for (i, j, len) in updates {
        a[[i, j]] = len;
        a[[j, i]] = len;
    }
    g.with_adjacency(a)
}

/// The affinity graph `1/ℓ` of a length-weighted graph.
pub fn affinity_graph(g: &Graph) -> Result<Graph> {
    g.with_adjacency(g.adjacency().mapv(|l| if l > 0.0 { 1.0 / l } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeryConfig {
    pub remove_above: f64,
    pub add_below: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SurgeryOutcome {
    pub graph: Graph,
    pub removed: Vec<(usize, usize)>,
    pub added: Vec<(usize, usize)>,
    /// The surgery split a connected graph.
    pub disconnected: bool,
}

/// Deletes edges longer than `remove_above` and joins two-hop pairs whose
/// shortest path through a common neighbor is below `add_below` with an edge
/// of length `add_below`. Both decisions are made on the input graph.
pub fn surgery(g: &Graph, remove_above: f64, add_below: Option<f64>) -> Result<SurgeryOutcome> {
    if !(remove_above > 0.0) || add_below.is_some_and(|t| t < 0.0 || t.is_nan()) {
        return Err(Error::InvalidParameter(format!(
            "surgery thresholds must be positive (remove_above = {remove_above}, add_below = {add_below:?})"
        )));
    }
    let n = g.n();
    let a = g.adjacency();
    let removed: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .filter(|e| e.2 > remove_above)
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut added = Vec::new();
    if let Some(t) = add_below.filter(|&t| t > 0.0) {
        let lists = g.adjacency_lists();
        for i in 0..n {
            for j in i + 1..n {
                if a[[i, j]] > 0.0 {
                    continue;
                }
                let through = lists[i]
                    .iter()
                    .filter(|&&(k, _)| a[[k, j]] > 0.0)
                    .map(|&(k, w)| w + a[[k, j]])
                    .fold(f64::INFINITY, f64::min);
                if through < t {
                    added.push((i, j));
                }
            }
        }
    }
    let mut next: Array2<f64> = a.clone();
    for &(i, j) in &removed {
        next[[i, j]] = 0.0;
        next[[j, i]] = 0.0;
    }
    let t = add_below.unwrap_or(0.0);
    for &(i, j) in &added {
        next[[i, j]] = t;
        next[[j, i]] = t;
    }
    let graph = g.with_adjacency(next)?;
    let disconnected = g.is_connected() && !graph.is_connected();
    if disconnected {
        warn!("surgery disconnected the graph into {} components", graph.num_components());
    }
    Ok(SurgeryOutcome {
        graph,
        removed,
        added,
        disconnected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub steps: usize,
    pub dt: f64,
    pub direction: FlowDirection,
    pub alpha: f64,
    pub surgery: Option<SurgeryConfig>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            steps: 20,
            dt: 0.05,
            direction: FlowDirection::Backward,
            alpha: 0.5,
            surgery: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSnapshot {
    pub step: usize,
    pub graph: Graph,
    pub curvature: RicciMatrix,
    pub spectral_gap: f64,
    pub connected: bool,
}

impl FlowSnapshot {
    pub fn min_edge_curvature(&self) -> Option<f64> {
        self.curvature
            .on_edges(&self.graph)
            .into_iter()
            .map(|e| e.2)
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub snapshots: Vec<FlowSnapshot>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowSnapshot {
        self.snapshots.last().expect("a trajectory holds its input snapshot")
    }
}

/// Runs the flow, refreshing exact curvature before every step. Snapshot `k`
/// holds the graph after `k` steps together with its curvature and gap.
pub fn run_flow(g: &Graph, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    if g.n() > FLOW_NODE_LIMIT {
        return Err(Error::SizeGuard {
            what: "flow nodes",
            actual: g.n(),
            limit: FLOW_NODE_LIMIT,
        });
    }
    if !g.is_connected() {
        return Err(Error::InvalidGraph("Ricci flow needs a connected graph".into()));
    }
    let mut current = g.clone();
    let mut connected = true;
    let mut snapshots = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let curvature = ricci_matrix_exact_with(&current, cfg.alpha, PairSet::EdgesOnly, EdgeSemantics::Length)?;
        let gap = spectral_gap(&affinity_graph(&current)?)?;
        snapshots.push(FlowSnapshot {
            step,
            graph: current.clone(),
            curvature: curvature.clone(),
            spectral_gap: gap,
            connected,
        });
        if step == cfg.steps {
            break;
        }
        current = flow_step(&current, &curvature, cfg.dt, cfg.direction)?;
        if let Some(s) = cfg.surgery {
            let outcome = surgery(&current, s.remove_above, s.add_below)?;
            connected &= !outcome.disconnected;
            current = outcome.graph;
        }
    }
    Ok(FlowTrajectory { snapshots })
}
