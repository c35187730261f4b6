//! Curvature surrogate `1 - ([L s]_i - [L s]_j) / d(i, j)` built from a
//! per-node scalar `s = f(x)`. With a 1-Lipschitz `f` the numerator never
//! exceeds the Wasserstein distance, so the surrogate bounds the exact
//! curvature from above.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CurvatureKind, RicciMatrix};
use crate::error::{Error, Result};
use crate::graph::check_alpha;
use crate::manifold::{max_radius, ManifoldConfig};
use crate::nn::ops::{gyro_matvec_scalar, lazy_walk_apply, mobius_add_scalar, pairwise_diff};
use crate::nn::{Tape, Var};

/// Distances below this count as coincident points (curvature 1).
const COINCIDENT: f64 = 1e-8;

/// Affine readout to one scalar per node: a Möbius affine map per curvature
/// factor plus an ordinary affine map on the Euclidean coordinates.
///
/// Weights are column vectors and biases `1 x 1` so the whole map is a flat
/// list of tensors for the optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub kappas: Vec<f64>,
    pub factor_weights: Vec<Array2<f64>>,
    pub factor_biases: Vec<Array2<f64>>,
    pub euclidean_weight: Array2<f64>,
    pub euclidean_bias: Array2<f64>,
}

/// An [`AffineMap`] placed on a tape.
#[derive(Debug, Clone)]
pub struct AffineVars<'t> {
    kappas: Vec<f64>,
    pub factor_weights: Vec<Var<'t>>,
    pub factor_biases: Vec<Var<'t>>,
    pub euclidean_weight: Var<'t>,
    pub euclidean_bias: Var<'t>,
}

impl AffineMap {
    pub fn zeros(config: &ManifoldConfig) -> Self {
        AffineMap {
            kappas: config.factors.iter().map(|f| f.kappa).collect(),
            factor_weights: config.factors.iter().map(|f| Array2::zeros((f.dim, 1))).collect(),
            factor_biases: config.factors.iter().map(|_| Array2::zeros((1, 1))).collect(),
            euclidean_weight: Array2::zeros((config.euclidean_dim, 1)),
            euclidean_bias: Array2::zeros((1, 1)),
        }
    }

    /// Uniform weights scaled so each has expected norm near one, small biases.
    pub fn random(config: &ManifoldConfig, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(config);
        fn fill(w: &mut Array2<f64>, rng: &mut impl Rng) {
            let scale = (3.0 / w.nrows().max(1) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-scale..scale));
        }
        for w in &mut f.factor_weights {
            fill(w, rng);
        }
        fill(&mut f.euclidean_weight, rng);
        for b in f.factor_biases.iter_mut().chain(std::iter::once(&mut f.euclidean_bias)) {
            b[[0, 0]] = rng.random_range(-0.1..0.1);
        }
        f
    }

    /// A map that only reads the Euclidean coordinates.
    pub fn euclidean(weight: Array2<f64>, bias: f64) -> Self {
        AffineMap {
            kappas: Vec::new(),
            factor_weights: Vec::new(),
            factor_biases: Vec::new(),
            euclidean_weight: weight,
            euclidean_bias: Array2::from_elem((1, 1), bias),
        }
    }

    pub fn num_factors(&self) -> usize {
        self.kappas.len()
    }

    /// Every weight and bias, in the order of [`AffineVars::all`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for (w, b) in self.factor_weights.iter_mut().zip(self.factor_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.euclidean_weight);
        out.push(&mut self.euclidean_bias);
        out
    }

    /// Pulls gyro biases back inside their ball after an unconstrained update.
    pub fn project_biases(&mut self) {
        for (b, &k) in self.factor_biases.iter_mut().zip(&self.kappas) {
            if let Some(r) = max_radius(k) {
                b[[0, 0]] = b[[0, 0]].clamp(-r, r);
            }
        }
    }

    pub fn on<'t>(&self, tape: &'t Tape) -> AffineVars<'t> {
        self.place(tape, true)
    }

    pub fn on_constant<'t>(&self, tape: &'t Tape) -> AffineVars<'t> {
        self.place(tape, false)
    }

    /// Handles over a flat list of tape variables in [`AffineVars::all`] order.
    pub fn vars_from<'t>(&self, flat: &[Var<'t>]) -> AffineVars<'t> {
        let m = self.num_factors();
        assert_eq!(flat.len(), 2 * m + 2, "affine map over {m} factors");
        AffineVars {
            kappas: self.kappas.clone(),
            factor_weights: (0..m).map(|k| flat[2 * k]).collect(),
            factor_biases: (0..m).map(|k| flat[2 * k + 1]).collect(),
            euclidean_weight: flat[2 * m],
            euclidean_bias: flat[2 * m + 1],
        }
    }

    fn place<'t>(&self, tape: &'t Tape, learnable: bool) -> AffineVars<'t> {
        let put = |x: &Array2<f64>| {
            if learnable {
                tape.param(x.clone())
            } else {
                tape.constant(x.clone())
            }
        };
        AffineVars {
            kappas: self.kappas.clone(),
            factor_weights: self.factor_weights.iter().map(put).collect(),
            factor_biases: self.factor_biases.iter().map(put).collect(),
            euclidean_weight: put(&self.euclidean_weight),
            euclidean_bias: put(&self.euclidean_bias),
        }
    }

    /// Plain evaluation of [`AffineVars::node_scalars`].
    pub fn node_scalars(&self, factors: &[Array2<f64>], euclidean: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(factors, euclidean)?;
        let tape = Tape::new();
        let vars = self.on_constant(&tape);
        let xs: Vec<Var<'_>> = factors.iter().map(|x| tape.constant(x.clone())).collect();
        let s = vars.node_scalars(&xs, tape.constant(euclidean.clone()));
        let out = s.value().clone();
        Ok(out)
    }

    pub(crate) fn check_inputs(&self, factors: &[Array2<f64>], euclidean: &Array2<f64>) -> Result<()> {
        if factors.len() != self.num_factors() {
            return Err(Error::DimensionMismatch(format!(
                "{} factor feature blocks for a map over {} factors",
                factors.len(),
                self.num_factors()
            )));
        }
        let n = euclidean.nrows();
        for (x, w) in factors.iter().zip(&self.factor_weights) {
            if x.ncols() != w.nrows() || x.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "factor block {:?} does not match weight {:?} over {n} nodes",
                    x.dim(),
                    w.dim()
                )));
            }
        }
        if euclidean.ncols() != self.euclidean_weight.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "euclidean block has {} columns, weight expects {}",
                euclidean.ncols(),
                self.euclidean_weight.nrows()
            )));
        }
        Ok(())
    }
}

impl<'t> AffineVars<'t> {
    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for (w, b) in self.factor_weights.iter().zip(&self.factor_biases) {
            out.push(*w);
            out.push(*b);
        }
        out.push(self.euclidean_weight);
        out.push(self.euclidean_bias);
        out
    }

    /// One scalar per node (`N x 1`): Möbius affine outputs of every factor,
    /// read as real numbers and summed, plus the Euclidean affine term.
    pub fn node_scalars(&self, factors: &[Var<'t>], euclidean: Var<'t>) -> Var<'t> {
        let mut s = euclidean.matmul(self.euclidean_weight) + self.euclidean_bias;
        for (k, x) in factors.iter().enumerate() {
            let kappa = self.kappas[k];
            let y = if kappa == 0.0 {
                x.matmul(self.factor_weights[k]) + self.factor_biases[k]
            } else {
                let mx = gyro_matvec_scalar(*x, self.factor_weights[k], kappa);
                mobius_add_scalar(mx, self.factor_biases[k], kappa)
            };
            s = s + y;
        }
        s
    }
}

/// Rescales every weight to spectral norm at most one. For column vectors the
/// spectral norm is the Euclidean norm. Biases are left alone.
pub fn lipschitz_normalize(mut f: AffineMap) -> AffineMap {
    let shrink = |w: &mut Array2<f64>| {
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            *w /= norm;
        }
    };
    for w in &mut f.factor_weights {
        shrink(w);
    }
    shrink(&mut f.euclidean_weight);
    f
}

/// Tape form of the surrogate on all pairs. `scalars` is `N x 1`, `dist` a
/// symmetric `N x N` matrix of pairwise distances.
pub fn diff_ricci_values<'t>(adjacency: Var<'t>, scalars: Var<'t>, dist: Var<'t>, alpha: f64) -> Var<'t> {
    let tape = adjacency.tape();
    let coincident = dist.value().mapv(|d| if d < COINCIDENT { 1.0 } else { 0.0 });
    let coincident = tape.constant(coincident);
    let kept = 1.0 - coincident;
    let smoothed = lazy_walk_apply(adjacency, scalars, alpha);
    let safe = dist * kept + coincident;
    1.0 - pairwise_diff(smoothed) * kept / safe
}

/// The surrogate curvature of every pair of nodes under adjacency `adjacency`,
/// node features split per factor plus a Euclidean block, affine readout `f`
/// and ground distance `dist`.
pub fn diff_ricci_matrix(
    adjacency: &Array2<f64>,
    factors: &[Array2<f64>],
    euclidean: &Array2<f64>,
    f: &AffineMap,
    alpha: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<RicciMatrix> {
    check_alpha(alpha)?;
    let n = adjacency.nrows();
    if adjacency.ncols() != n || euclidean.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency {:?} with {} feature rows",
            adjacency.dim(),
            euclidean.nrows()
        )));
    }
    let s = f.node_scalars(factors, euclidean)?;
    let d = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { dist(i, j) });
    let tape = Tape::new();
    let values = diff_ricci_values(
        tape.constant(adjacency.clone()),
        tape.constant(s),
        tape.constant(d),
        alpha,
    );
    let values = values.value().clone();
    Ok(RicciMatrix {
        values,
        kind: CurvatureKind::Differentiable,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::{ricci_matrix_exact, PairSet};
    use crate::graph::{hop_ground_matrix, make_synthetic, Graph, Synthetic};
    use crate::manifold::Factor;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k2() -> Array2<f64> {
        array![[0.0, 1.0], [1.0, 0.0]]
    }

    fn scalar_map(s: &[f64]) -> (AffineMap, Array2<f64>) {
        // One-hot features and weights equal to the desired scalars.
        let n = s.len();
        let w = Array2::from_shape_fn((n, 1), |(i, _)| s[i]);
        (AffineMap::euclidean(w, 0.0), Array2::eye(n))
    }

    #[test]
    fn constant_map_gives_unit_curvature() {
        let g = make_synthetic(&Synthetic::Karate, 0).unwrap();
        let f = AffineMap::euclidean(Array2::zeros((34, 1)), 0.7);
        let r = diff_ricci_matrix(g.adjacency(), &[], &Array2::eye(34), &f, 0.5, |_, _| 1.0).unwrap();
        assert!(r.values.iter().all(|&v| v == 1.0));
        assert_eq!(r.kind, CurvatureKind::Differentiable);
    }

    #[test]
    fn k2_balanced_laziness_is_flat() {
        let (f, x) = scalar_map(&[3.0, -1.5]);
        let r = diff_ricci_matrix(&k2(), &[], &x, &f, 0.5, |_, _| 1.0).unwrap();
        assert_eq!(r.values[[0, 1]], 1.0);
    }

    #[test]
    fn k2_low_laziness() {
        let (f, x) = scalar_map(&[1.0, 0.0]);
        let r = diff_ricci_matrix(&k2(), &[], &x, &f, 0.2, |_, _| 1.0).unwrap();
        assert!((r.values[[0, 1]] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_are_flat() {
        let (f, x) = scalar_map(&[1.0, 0.0]);
        let r = diff_ricci_matrix(&k2(), &[], &x, &f, 0.2, |_, _| 1e-9).unwrap();
        assert_eq!(r.values[[0, 1]], 1.0);
        assert_eq!(r.values[[0, 0]], 1.0);
    }

    #[test]
    fn normalization_scales_large_weights_only() {
        let small = AffineMap::euclidean(array![[0.3], [0.4]], 2.0);
        assert_eq!(lipschitz_normalize(small.clone()), small);
        let big = AffineMap::euclidean(array![[0.0], [4.0]], 2.0);
        let n = lipschitz_normalize(big);
        assert_eq!(n.euclidean_weight, array![[0.0], [1.0]]);
        assert_eq!(n.euclidean_bias[[0, 0]], 2.0);
    }

    #[test]
    fn normalized_map_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = lipschitz_normalize(AffineMap::euclidean(
            Array2::from_shape_fn((6, 1), |_| rng.random_range(-5.0..5.0)),
            0.3,
        ));
        let x = Array2::from_shape_fn((100, 6), |_| rng.random_range(-2.0..2.0));
        let y = Array2::from_shape_fn((100, 6), |_| rng.random_range(-2.0..2.0));
        let sx = f.node_scalars(&[], &x).unwrap();
        let sy = f.node_scalars(&[], &y).unwrap();
        for i in 0..100 {
            let d = (&x.row(i) - &y.row(i)).mapv(|v| v * v).sum().sqrt();
            assert!((sx[[i, 0]] - sy[[i, 0]]).abs() <= d + 1e-12);
        }
    }

    #[test]
    fn factor_blocks_are_validated() {
        let cfg = ManifoldConfig::new(vec![Factor { kappa: -1.0, dim: 2 }], 3).unwrap();
        let f = AffineMap::zeros(&cfg);
        assert!(f.node_scalars(&[], &Array2::zeros((4, 3))).is_err());
        assert!(f.node_scalars(&[Array2::zeros((4, 5))], &Array2::zeros((4, 3))).is_err());
        assert!(f.node_scalars(&[Array2::zeros((4, 2))], &Array2::zeros((4, 3))).is_ok());
    }

    #[test]
    fn bounds_exact_curvature_on_a_cycle() {
        // Hop rows scaled by 1/sqrt(n) make any unit-norm readout 1-Lipschitz
        // in hop distance.
        let g = make_synthetic(&Synthetic::Cycle(7), 0).unwrap();
        let hop = hop_ground_matrix(&g);
        let x = &hop / (7f64).sqrt();
        let exact = ricci_matrix_exact(&g, 0.5, PairSet::EdgesOnly).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let w = Array2::from_shape_fn((7, 1), |_| rng.random_range(-1.0..1.0));
            let f = lipschitz_normalize(AffineMap::euclidean(w, 0.0));
            let d = diff_ricci_matrix(g.adjacency(), &[], &x, &f, 0.5, |i, j| hop[[i, j]]).unwrap();
            for (i, j, e) in exact.on_edges(&g) {
                assert!(d.values[[i, j]] >= e - 1e-9);
            }
        }
    }

    #[test]
    fn gradients_reach_features_graph_and_map() {
        let cfg = ManifoldConfig::new(
            vec![Factor { kappa: -1.0, dim: 2 }, Factor { kappa: 1.0, dim: 2 }],
            2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = AffineMap::random(&cfg, &mut rng);
        let g = Graph::from_edges(4, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0), (0, 2, 1.0)]).unwrap();
        let xh = Array2::from_shape_fn((4, 2), |_| rng.random_range(-0.4..0.4));
        let xs = Array2::from_shape_fn((4, 2), |_| rng.random_range(-0.4..0.4));
        let xe = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let dist = Array2::from_shape_fn((4, 4), |(i, j)| 1.0 + (i + j) as f64 * 0.1);
        let mut inputs = vec![g.adjacency().clone(), xh, xs, xe];
        inputs.extend([
            f.factor_weights[0].clone(),
            f.factor_biases[0].clone(),
            f.factor_weights[1].clone(),
            f.factor_biases[1].clone(),
            f.euclidean_weight.clone(),
            f.euclidean_bias.clone(),
        ]);
        let kappas = f.kappas.clone();
        let r = grad_check(
            |tape, v| {
                let vars = AffineVars {
                    kappas: kappas.clone(),
                    factor_weights: vec![v[4], v[6]],
                    factor_biases: vec![v[5], v[7]],
                    euclidean_weight: v[8],
                    euclidean_bias: v[9],
                };
                let s = vars.node_scalars(&[v[1], v[2]], v[3]);
                diff_ricci_values(v[0], s, tape.constant(dist.clone()), 0.3).square().sum()
            },
            &inputs,
            GradCheckOptions {
                coords: None,
                ..Default::default()
            },
        );
        assert!(r.passed(), "{}", r.max_rel_error);
    }
}
