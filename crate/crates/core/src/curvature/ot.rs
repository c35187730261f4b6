//! Exact discrete optimal transport by successive shortest paths.
//!
//! Supports are tiny (a node and its neighborhood), so the residual network is
//! handled densely and shortest paths use Bellman-Ford, which copes with the
//! negative reverse arcs without maintaining potentials. Once no supply is
//! left, one more Bellman-Ford sweep over the residual network yields dual
//! potentials that certify optimality.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Amounts at or below this are treated as zero.
const MASS_EPS: f64 = 1e-15;
/// Marginal sums may differ by this much before the problem is infeasible.
const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    /// `flow[[i, j]]`: mass moved from supply `i` to demand `j`.
    pub flow: Array2<f64>,
    pub cost: f64,
    /// Dual potentials with `u[i] + v[j] <= cost[[i, j]]` for every pair.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Transport {
    pub fn dual_objective(&self, supply: &[f64], demand: &[f64]) -> f64 {
        let a: f64 = supply.iter().zip(&self.u).map(|(p, u)| p * u).sum();
        let b: f64 = demand.iter().zip(&self.v).map(|(q, v)| q * v).sum();
        a + b
    }
}

/// Solves `min Σ cost[i][j] x[i][j]` subject to row sums `supply` and column
/// sums `demand`. Costs must be finite; masses nonnegative.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &Array2<f64>) -> Result<Transport> {
    let (k, l) = (supply.len(), demand.len());
    if cost.dim() != (k, l) {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix {:?} for {k} supplies and {l} demands",
            cost.dim()
        )));
    }
    if supply.iter().chain(demand).any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidParameter("masses must be finite and nonnegative".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transport cost".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > BALANCE_TOL {
        return Err(Error::Infeasible {
            supply: total_s,
            demand: total_d,
        });
    }

    let mut left_s = supply.to_vec();
    let mut left_d = demand.to_vec();
    let mut flow = Array2::zeros((k, l));

    // Network nodes: supplies 0..k, demands k..k+l.
    let nn = k + l;
    let mut dist = vec![0.0; nn];
    let mut pred = vec![usize::MAX; nn];
    loop {
        if left_s.iter().all(|&m| m <= MASS_EPS) || left_d.iter().all(|&m| m <= MASS_EPS) {
            break;
        }
        // Multi-source shortest paths from every supply with mass left.
        dist.fill(f64::INFINITY);
        pred.fill(usize::MAX);
        for i in 0..k {
            if left_s[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nn {
            let mut changed = false;
            for i in 0..k {
                if dist[i].is_finite() {
                    for j in 0..l {
                        let nd = dist[i] + cost[[i, j]];
                        if nd < dist[k + j] - 1e-14 {
                            dist[k + j] = nd;
                            pred[k + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..l {
                if dist[k + j].is_finite() {
                    for i in 0..k {
                        if flow[[i, j]] > MASS_EPS {
                            let nd = dist[k + j] - cost[[i, j]];
                            if nd < dist[i] - 1e-14 {
                                dist[i] = nd;
                                pred[i] = k + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let target = (0..l)
            .filter(|&j| left_d[j] > MASS_EPS && dist[k + j].is_finite())
            .min_by(|&a, &b| dist[k + a].total_cmp(&dist[k + b]));
        let Some(tj) = target else {
            return Err(Error::Infeasible {
                supply: total_s,
                demand: total_d,
            });
        };

        // Walk back to the source, collecting the bottleneck.
        let mut path = Vec::new();
        let mut node = k + tj;
        let mut amount = left_d[tj];
        while pred[node] != usize::MAX {
            let p = pred[node];
            if node >= k {
                path.push((p, node - k, true));
            } else {
                amount = amount.min(flow[[node, p - k]]);
                path.push((node, p - k, false));
            }
            node = p;
        }
        amount = amount.min(left_s[node]);
        for &(i, j, forward) in &path {
            if forward {
                flow[[i, j]] += amount;
            } else {
                flow[[i, j]] -= amount;
                if flow[[i, j]] < MASS_EPS {
                    flow[[i, j]] = 0.0;
                }
            }
        }
        left_s[node] -= amount;
        left_d[tj] -= amount;
    }

    let (u, v) = potentials(&flow, cost);
    let total = flow.iter().zip(cost.iter()).map(|(x, c)| x * c).sum();
    Ok(Transport {
        flow,
        cost: total,
        u,
        v,
    })
}

/// Shortest distances from a virtual root joined to every node by zero-cost
/// arcs, on the residual network of an optimal flow. Supplies get `u = -d`,
/// demands `v = d`; reduced costs of forward arcs are then nonnegative and
/// zero on every arc carrying flow.
fn potentials(flow: &Array2<f64>, cost: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = flow.dim();
    let mut ds = vec![0.0; k];
    let mut dd = vec![0.0; l];
    for _ in 0..(k + l + 1) {
        let mut changed = false;
        for i in 0..k {
            for j in 0..l {
                let nd = ds[i] + cost[[i, j]];
                if nd < dd[j] {
                    dd[j] = nd;
                    changed = true;
                }
                if flow[[i, j]] > MASS_EPS {
                    let nd = dd[j] - cost[[i, j]];
                    if nd < ds[i] {
                        ds[i] = nd;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    (ds.into_iter().map(|d| -d).collect(), dd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_by_two_enumerated() {
        let t = solve_transport(&[0.25, 0.25], &[0.25, 0.25], &array![[1.0, 2.0], [2.0, 3.0]])
            .unwrap();
        assert!((t.cost - 1.0).abs() < 1e-15);
        assert!((t.dual_objective(&[0.25, 0.25], &[0.25, 0.25]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_masses() {
        let t = solve_transport(&[1.0], &[1.0], &array![[3.5]]).unwrap();
        assert_eq!(t.cost, 3.5);
    }

    #[test]
    fn rerouting_needs_reverse_arc() {
        // Greedy would ship s0 -> d0 at cost 0 and then pay 10 for s1 -> d1.
        let cost = array![[0.0, 1.0], [1.0, 10.0]];
        let t = solve_transport(&[1.0, 1.0], &[1.0, 1.0], &cost).unwrap();
        assert!((t.cost - 2.0).abs() < 1e-12);
        assert_eq!(t.flow, array![[0.0, 1.0], [1.0, 0.0]]);
        assert!((t.dual_objective(&[1.0, 1.0], &[1.0, 1.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dual_feasible() {
        let cost = array![[1.0, 4.0, 2.0], [3.0, 0.5, 2.5]];
        let (p, q) = ([0.6, 0.4], [0.2, 0.5, 0.3]);
        let t = solve_transport(&p, &q, &cost).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!(t.u[i] + t.v[j] <= cost[[i, j]] + 1e-12);
            }
        }
        assert!((t.cost - t.dual_objective(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn unbalanced_is_infeasible() {
        let r = solve_transport(&[1.0], &[0.5], &array![[1.0]]);
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }
}
