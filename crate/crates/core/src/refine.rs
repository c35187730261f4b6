//! Structure and feature refinement objectives.
//!
//! The structure side samples a relaxed adjacency `A*` from multi-head cosine
//! similarities, smooths the per-node curvature scalar with the lazy walk on
//! `A*`, and scores observed edges with a Fermi-Dirac decoder of the resulting
//! distances. The feature side is a symmetric InfoNCE between the Euclidean
//! view and every curved view.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::ops::{lazy_walk_apply, pairwise_diff};
use crate::nn::{Tape, Var};

pub use crate::nn::ops::infonce;

/// Lower clamp of the similarity; the upper clamp is `1 - PI_CLAMP`.
pub const PI_CLAMP: f64 = 1e-4;
/// Probability floor inside the log-likelihood.
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FermiDirac {
    pub r: f64,
    pub s: f64,
}

impl Default for FermiDirac {
    fn default() -> Self {
        FermiDirac { r: 2.0, s: 1.0 }
    }
}

/// `π_ij`: mean over heads of the cosine between projected rows, clamped into
/// `[1e-4, 1 - 1e-4]`. A zero projected row has similarity 0 in that head.
pub fn pairwise_similarity<'t>(views: &[Var<'t>], heads: &[Var<'t>]) -> Result<Var<'t>> {
    if views.is_empty() || views.len() != heads.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} views for {} similarity heads",
            views.len(),
            heads.len()
        )));
    }
    let n = views[0].shape().0;
    let mut total: Option<Var<'t>> = None;
    for (x, s) in views.iter().zip(heads) {
        if x.shape().0 != n || x.shape().1 != s.shape().0 {
            return Err(Error::DimensionMismatch(format!(
                "view {:?} against head {:?}",
                x.shape(),
                s.shape()
            )));
        }
        let u = unit_rows(x.matmul(*s));
        let cos = u.matmul(u.t());
        total = Some(match total {
            Some(t) => t + cos,
            None => cos,
        });
    }
    let mean = total.expect("at least one view").scale(1.0 / views.len() as f64);
    Ok(mean.clamp(PI_CLAMP, 1.0 - PI_CLAMP))
}

fn unit_rows(p: Var<'_>) -> Var<'_> {
    let norm = p.row_norm();
    let zero = norm.value().mapv(|v| if v > 0.0 { 0.0 } else { 1.0 });
    let zero = p.tape().constant(zero);
    p / (norm + zero)
}

/// Symmetric logistic noise `log(ε / (1 - ε))`, drawn on the upper triangle
/// and mirrored; zero on the diagonal.
pub fn logistic_noise(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut noise = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let e: f64 = rng.random_range(f64::EPSILON..1.0);
            let l = (e / (1.0 - e)).ln();
            noise[[i, j]] = l;
            noise[[j, i]] = l;
        }
    }
    noise
}

/// Gumbel-sigmoid relaxation `σ((logit π + noise) / τ)` with a zero diagonal.
pub fn relaxed_adjacency<'t>(pi: Var<'t>, noise: &Array2<f64>, tau: f64) -> Var<'t> {
    let tape = pi.tape();
    let n = noise.nrows();
    let off_diag = tape.constant(Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 }));
    let logit = pi.ln() - (1.0 - pi).ln();
    ((logit + tape.constant(noise.clone())).scale(1.0 / tau)).sigmoid() * off_diag
}

/// One relaxed sample of `A*` from a symmetric `π`.
pub fn sample_adjacency(pi: &Array2<f64>, tau: f64, seed: u64) -> Result<Array2<f64>> {
    check_tau(tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = logistic_noise(pi.nrows(), &mut rng);
    let tape = Tape::new();
    let a = relaxed_adjacency(tape.constant(pi.clone()), &noise, tau);
    let out = a.value().clone();
    Ok(out)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature {tau} must be positive")));
    }
    Ok(())
}

/// `A* + I`, the propagation operator handed to the GCN.
pub fn with_self_loops(a: Var<'_>) -> Var<'_> {
    let n = a.shape().0;
    a + a.tape().constant(Array2::eye(n))
}

/// `D_ij = |[L s]_i - [L s]_j|` with the lazy walk taken on `A*`.
pub fn backward_flow_distance<'t>(a_star: Var<'t>, scalars: Var<'t>, alpha: f64) -> Var<'t> {
    pairwise_diff(lazy_walk_apply(a_star, scalars, alpha)).abs()
}

/// `σ((r - D) / s)`.
pub fn fermi_dirac(d: Var<'_>, decoder: FermiDirac) -> Var<'_> {
    (1.0 - d.scale(1.0 / decoder.r)).scale(decoder.r / decoder.s).sigmoid()
}

/// Positive and negative pair weights for the structure likelihood: each
/// observed edge once, and `neg_per_pos` uniformly drawn non-edges per edge.
#[derive(Debug, Clone)]
pub struct EdgeSample {
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
}

impl EdgeSample {
    pub fn draw(observed: &Graph, neg_per_pos: usize, rng: &mut impl Rng) -> Self {
        let n = observed.n();
        let mut positive = Array2::zeros((n, n));
        let edges = observed.edges();
        for &(i, j, _) in &edges {
            positive[[i, j]] = 1.0;
        }
        let mut negative = Array2::zeros((n, n));
        let non_edges = n * (n - 1) / 2 - edges.len();
        let wanted = edges.len() * neg_per_pos;
        if non_edges > 0 && wanted > 0 {
            // Draw uniformly over non-edges with replacement.
            let mut drawn = 0;
            while drawn < wanted {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i == j || observed.has_edge(i, j) {
                    continue;
                }
                negative[[i.min(j), i.max(j)]] += 1.0;
                drawn += 1;
            }
        }
        EdgeSample { positive, negative }
    }

    pub fn total(&self) -> f64 {
        self.positive.sum() + self.negative.sum()
    }
}

/// Mean binary cross-entropy of `P` over the sampled pairs.
pub fn structure_loss_on<'t>(p: Var<'t>, pairs: &EdgeSample) -> Var<'t> {
    let tape = p.tape();
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let pos = (p.ln() * tape.constant(pairs.positive.clone())).sum();
    let neg = ((1.0 - p).ln() * tape.constant(pairs.negative.clone())).sum();
    -(pos + neg).scale(1.0 / pairs.total().max(1.0))
}

/// [`structure_loss_on`] with negatives drawn from `seed`.
pub fn structure_loss<'t>(observed: &Graph, p: Var<'t>, neg_per_pos: usize, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    structure_loss_on(p, &EdgeSample::draw(observed, neg_per_pos, &mut rng))
}

/// Symmetric InfoNCE between the first view and each other view, averaged.
pub fn feature_loss<'t>(views: &[Var<'t>]) -> Result<Var<'t>> {
    if views.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "feature loss needs at least two views, got {}",
            views.len()
        )));
    }
    let shape = views[0].shape();
    if let Some(v) = views.iter().find(|v| v.shape() != shape) {
        return Err(Error::DimensionMismatch(format!(
            "view {:?} differs from {:?}",
            v.shape(),
            shape
        )));
    }
    let base = views[0];
    let mut total = infonce(base, views[1]) + infonce(views[1], base);
    for &v in &views[2..] {
        total = total + infonce(base, v) + infonce(v, base);
    }
    Ok(total.scale(1.0 / (views.len() - 1) as f64))
}

/// Output of refinement: the relaxed adjacency (zero diagonal), the refined
/// features and the view embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinedGraph {
    pub a_star: Array2<f64>,
    pub x_star: Array2<f64>,
    pub views: Vec<Array2<f64>>,
}

impl RefinedGraph {
    /// `A*` as a weighted graph carrying the labels and splits of `base`.
    pub fn graph(&self, base: &Graph) -> Result<Graph> {
        let mut a = self.a_star.clone();
        a.diag_mut().fill(0.0);
        let sym = (&a + &a.t()) / 2.0;
        base.with_adjacency(sym)
    }

    /// Keeps entries at or above `threshold`, for export.
    pub fn thresholded(&self, threshold: f64) -> Array2<f64> {
        self.a_star.mapv(|v| if v >= threshold { v } else { 0.0 })
    }

    /// Concatenated view embeddings, the clustering input.
    pub fn concatenated_views(&self) -> Array2<f64> {
        let n = self.a_star.nrows();
        let width: usize = self.views.iter().map(|v| v.ncols()).sum();
        let mut out = Array2::zeros((n, width));
        let mut col = 0;
        for v in &self.views {
            out.slice_mut(ndarray::s![.., col..col + v.ncols()]).assign(v);
            col += v.ncols();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_synthetic, Synthetic};
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use ndarray::array;

    fn eval(f: impl for<'t> Fn(&'t Tape) -> Var<'t>) -> Array2<f64> {
        let t = Tape::new();
        let v = f(&t);
        let out = v.value().clone();
        out
    }

    #[test]
    fn similarity_examples() {
        let same = eval(|t| {
            let x = t.constant(array![[1.0, 2.0], [2.0, 4.0]]);
            pairwise_similarity(&[x], &[t.constant(Array2::eye(2))]).unwrap()
        });
        assert_eq!(same[[0, 1]], 1.0 - PI_CLAMP);
        let ortho = eval(|t| {
            let x = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
            pairwise_similarity(&[x], &[t.constant(Array2::eye(2))]).unwrap()
        });
        assert_eq!(ortho[[0, 1]], PI_CLAMP);
        let mixed = eval(|t| {
            let a = t.constant(array![[1.0, 0.0], [1.0, 0.0]]);
            let b = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
            let h = t.constant(Array2::eye(2));
            pairwise_similarity(&[a, b], &[h, h]).unwrap()
        });
        assert!((mixed[[0, 1]] - 0.5).abs() < 1e-15);
        let zero = eval(|t| {
            let a = t.constant(array![[0.0, 0.0], [1.0, 0.0]]);
            pairwise_similarity(&[a], &[t.constant(Array2::eye(2))]).unwrap()
        });
        assert_eq!(zero[[0, 1]], PI_CLAMP);
    }

    #[test]
    fn gumbel_sigmoid_examples() {
        let t = Tape::new();
        let at = |p: f64, noise: f64, tau: f64| {
            let pi = t.constant(Array2::from_elem((2, 2), p));
            let noise = array![[0.0, noise], [noise, 0.0]];
            relaxed_adjacency(pi, &noise, tau).value()[[0, 1]]
        };
        assert!((at(0.5, 0.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((at(0.9, 0.0, 1.0) - 0.9).abs() < 1e-12);
        assert!(at(0.7, 0.0, 1e-3) > 1.0 - 1e-12);
    }

    #[test]
    fn samples_are_symmetric_with_zero_diagonal() {
        let pi = Array2::from_shape_fn((6, 6), |(i, j)| 0.1 + 0.1 * ((i + j) % 8) as f64);
        let a = sample_adjacency(&pi, 0.5, 3).unwrap();
        assert_eq!(a, a.t());
        assert!(a.diag().iter().all(|&v| v == 0.0));
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a, sample_adjacency(&pi, 0.5, 3).unwrap());
        assert!(sample_adjacency(&pi, 0.0, 3).is_err());
    }

    #[test]
    fn sample_mean_increases_with_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tape::new();
        let mut means = Vec::new();
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let pi = t.constant(Array2::from_elem((2, 2), p));
            let mut acc = 0.0;
            for _ in 0..10_000 {
                let noise = logistic_noise(2, &mut rng);
                acc += relaxed_adjacency(pi, &noise, 1.0).value()[[0, 1]];
            }
            means.push(acc / 1e4);
        }
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }

    #[test]
    fn flow_distance_examples() {
        let k2 = array![[0.0, 1.0], [1.0, 0.0]];
        let d = |s: Array2<f64>, alpha| {
            eval(|t| backward_flow_distance(t.constant(k2.clone()), t.constant(s.clone()), alpha))
        };
        assert!((d(array![[1.0], [0.0]], 0.2)[[0, 1]] - 0.6).abs() < 1e-15);
        assert_eq!(d(array![[1.0], [0.0]], 0.5)[[0, 1]], 0.0);
        assert!(d(array![[2.0], [2.0]], 0.3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fermi_dirac_examples() {
        let fd = FermiDirac::default();
        let p = eval(|t| fermi_dirac(t.constant(array![[2.0, 1.0, 1e6]]), fd));
        assert!((p[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(p[[0, 2]] < 1e-300);
    }

    #[test]
    fn structure_loss_examples() {
        let g = make_synthetic(&Synthetic::Barbell(4), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = EdgeSample::draw(&g, 5, &mut rng);
        assert_eq!(pairs.negative.sum(), 5.0 * g.num_edges() as f64);
        let t = Tape::new();
        let half = structure_loss_on(t.constant(Array2::from_elem((8, 8), 0.5)), &pairs);
        assert!((half.item() - 2f64.ln()).abs() < 1e-12);
        let ideal = g.adjacency().mapv(|w| if w > 0.0 { 1.0 - 1e-12 } else { 1e-12 });
        assert!(structure_loss_on(t.constant(ideal), &pairs).item() < 1e-10);
        let only_pos = structure_loss(&g, t.constant(Array2::from_elem((8, 8), 0.25)), 0, 0);
        assert!((only_pos.item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn structure_loss_falls_as_edges_strengthen() {
        let g = make_synthetic(&Synthetic::Cycle(6), 0).unwrap();
        let t = Tape::new();
        let with = |edge_p: f64| {
            let p = g.adjacency().mapv(|w| if w > 0.0 { edge_p } else { 0.3 });
            structure_loss(&g, t.constant(p), 5, 1).item()
        };
        assert!(with(0.8) < with(0.6));
        assert!(with(0.6) < with(0.4));
    }

    #[test]
    fn feature_loss_examples() {
        let t = Tape::new();
        let z = t.constant(array![[0.3, 0.1]]);
        assert_eq!(feature_loss(&[z, z]).unwrap().item(), 0.0);
        assert!(feature_loss(&[z]).is_err());
        let a = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let b = t.constant(array![[0.5, 0.2], [0.1, 0.9]]);
        let two = feature_loss(&[a, b]).unwrap().item();
        assert!((two - (infonce(a, b).item() + infonce(b, a).item())).abs() < 1e-15);
        let three = feature_loss(&[a, b, b]).unwrap().item();
        assert!((three - two).abs() < 1e-14);
        assert!(feature_loss(&[a, t.constant(array![[1.0, 2.0, 3.0]])]).is_err());
    }

    #[test]
    fn infonce_prefers_identity_alignment() {
        let z = array![[1.0, 0.2], [0.3, 1.5], [-0.7, 0.4], [0.2, -1.1]];
        let t = Tape::new();
        let zv = t.constant(z.clone());
        let aligned = infonce(zv, zv).item();
        let perms = [[1, 0, 2, 3], [0, 2, 1, 3], [3, 1, 2, 0], [1, 2, 3, 0], [2, 3, 0, 1]];
        for p in perms {
            let shuffled = Array2::from_shape_fn((4, 2), |(i, j)| z[[p[i], j]]);
            assert!(infonce(zv, t.constant(shuffled)).item() > aligned);
        }
    }

    #[test]
    fn losses_have_correct_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = make_synthetic(&Synthetic::Barbell(3), 0).unwrap();
        let pairs = EdgeSample::draw(&g, 3, &mut rng);
        let noise = logistic_noise(6, &mut rng);
        let mut r = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        let (x, head, s) = (r(6, 3), r(3, 4), r(6, 1));
        let report = grad_check(
            |_, v| {
                let pi = pairwise_similarity(&[v[0]], &[v[1]]).unwrap();
                let a = relaxed_adjacency(pi, &noise, 0.5);
                let p = fermi_dirac(backward_flow_distance(a, v[2], 0.5), FermiDirac::default());
                structure_loss_on(p, &pairs)
            },
            &[x, head, s],
            GradCheckOptions {
                coords: None,
                ..Default::default()
            },
        );
        assert!(report.passed(), "{}", report.max_rel_error);
    }

    #[test]
    fn refined_graph_helpers() {
        let g = make_synthetic(&Synthetic::Path(3), 0).unwrap();
        let r = RefinedGraph {
            a_star: array![[0.0, 0.8, 0.1], [0.8, 0.0, 0.6], [0.1, 0.6, 0.0]],
            x_star: Array2::zeros((3, 1)),
            views: vec![Array2::ones((3, 2)), Array2::zeros((3, 1))],
        };
        assert_eq!(r.graph(&g).unwrap().weight(0, 2), 0.1);
        assert_eq!(r.thresholded(0.5)[[0, 2]], 0.0);
        assert_eq!(r.concatenated_views().dim(), (3, 3));
    }
}
