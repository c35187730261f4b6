//! Differentiable compositions used by the model: row-wise gyrovector
//! operations, gyrovector waves, graph propagation operators and contrastive
//! losses. Rows are nodes throughout.

use std::f64::consts::SQRT_2;

use ndarray::{Array2, Axis};

use super::tape::Var;
use crate::feature_map::{FeatureMapSpec, HorocycleForm, GROWTH_CLAMP};

/// `artan_κ(√|κ| r) / (√|κ| r)`, smooth through `r = 0`.
pub fn artan_ratio(r: Var<'_>, kappa: f64) -> Var<'_> {
    let sk = kappa.abs().sqrt();
    let sign = kappa.signum();
    // f(z) = artan(z)/z ≈ 1 - sign·z²/3 near 0, so f'(z) ≈ -2·sign·z/3.
    let f = move |r: f64| {
        let z = sk * r;
        if z.abs() < 1e-5 {
            1.0 - sign * z * z / 3.0
        } else if kappa > 0.0 {
            z.atan() / z
        } else {
            z.atanh() / z
        }
    };
    r.unary(f, move |r, y| {
        let z = sk * r;
        let dz = if z.abs() < 1e-5 {
            -2.0 * sign * z / 3.0
        } else {
            let d_artan = 1.0 / (1.0 + sign * z * z);
            (d_artan - y) / z
        };
        dz * sk
    })
}

/// Row-wise Möbius addition. `y` may be a single broadcast row.
pub fn mobius_add<'t>(x: Var<'t>, y: Var<'t>, kappa: f64) -> Var<'t> {
    let xy = (x * y).sum_rows();
    let x2 = x.square().sum_rows();
    let y2 = y.square().sum_rows();
    let a = 1.0 - xy.scale(2.0 * kappa) - y2.scale(kappa);
    let b = 1.0 + x2.scale(kappa);
    let den = 1.0 - xy.scale(2.0 * kappa) + (x2 * y2).scale(kappa * kappa);
    (x * a + y * b) / den
}

/// Row-wise geodesic distance, `N x 1`.
pub fn gyro_distance<'t>(x: Var<'t>, y: Var<'t>, kappa: f64) -> Var<'t> {
    let sk = kappa.abs().sqrt();
    let n = mobius_add(-x, y, kappa).row_norm();
    n.scale(sk).artan_k(kappa).scale(2.0 / sk)
}

/// Row-wise logarithmic map at the origin.
pub fn log_map_zero(x: Var<'_>, kappa: f64) -> Var<'_> {
    x * artan_ratio(x.row_norm(), kappa).scale(2.0)
}

/// Möbius product of each row with a `d x 1` weight: one gyro-scalar per row.
pub fn gyro_matvec_scalar<'t>(x: Var<'t>, w: Var<'t>, kappa: f64) -> Var<'t> {
    let sk = kappa.abs().sqrt();
    let y = x.matmul(w);
    let ratio = artan_ratio(x.row_norm(), kappa);
    (y * ratio).scale(sk).tan_k(kappa).scale(1.0 / sk)
}

/// One-dimensional Möbius addition `(a + b) / (1 - κ a b)`.
pub fn mobius_add_scalar<'t>(a: Var<'t>, b: Var<'t>, kappa: f64) -> Var<'t> {
    (a + b) / (1.0 - (a * b).scale(kappa))
}

/// Gyrovector waves of every row under a frozen feature map.
pub fn feature_waves<'t>(x: Var<'t>, spec: &FeatureMapSpec) -> Var<'t> {
    let tape = x.tape();
    let m = spec.dim_out as f64;
    let omegas_t = tape.constant(spec.omegas.t().to_owned());
    let bias = tape.constant(spec.biases.clone().insert_axis(Axis(0)));
    let c = x.matmul(omegas_t);
    if spec.kappa == 0.0 {
        return (c + bias).cos().scale(SQRT_2 / m.sqrt());
    }
    let kappa = spec.kappa;
    let sk = kappa.abs().sqrt();
    let r2 = x.square().sum_rows();
    let s = match spec.form {
        HorocycleForm::Busemann => {
            let z = (c.scale(sk) - r2.scale(kappa.abs())) / (1.0 - c.scale(sk));
            z.artan_k(kappa).scale(2.0 / sk)
        }
        HorocycleForm::Literal => {
            let z = (r2 - c).scale(sk) / (1.0 + c);
            z.artan_k(kappa).scale(1.0 / sk)
        }
    };
    let lambdas = tape.constant(spec.lambdas.clone().insert_axis(Axis(0)));
    let growth = (spec.dim_in as f64 - 1.0) / 2.0;
    let amp = s.scale(growth).clamp(-GROWTH_CLAMP, GROWTH_CLAMP).exp();
    let phase = (s * lambdas + bias).cos();
    (amp * phase).scale(1.0 / m.sqrt())
}

/// `[α I + (1 - α) D⁻¹ A] s` for a weighted adjacency `A` and column `s`.
/// Zero-degree rows act as identity.
pub fn lazy_walk_apply<'t>(a: Var<'t>, s: Var<'t>, alpha: f64) -> Var<'t> {
    let tape = a.tape();
    let deg = a.sum_rows();
    let isolated = deg.value().mapv(|d| if d > 0.0 { 0.0 } else { 1.0 });
    let isolated = tape.constant(isolated);
    let walked = (a.matmul(s) + isolated * s) / (deg + isolated);
    s.scale(alpha) + walked.scale(1.0 - alpha)
}

/// `D^{-1/2} A D^{-1/2}` with degrees taken from `A` itself (self-loops
/// included by the caller).
pub fn gcn_normalize(a: Var<'_>) -> Var<'_> {
    let dinv = a.sum_rows().sqrt().recip();
    a * dinv * dinv.t()
}

/// `t_i - t_j` for a column `t`, as an `N x N` matrix.
pub fn pairwise_diff(t: Var<'_>) -> Var<'_> {
    t - t.t()
}

/// InfoNCE with inner-product scores: positives on the diagonal of
/// `Z_a Z_bᵀ`.
pub fn infonce<'t>(za: Var<'t>, zb: Var<'t>) -> Var<'t> {
    -za.matmul(zb.t()).log_softmax_rows().diag().mean()
}

/// Mean cross entropy of `logits` over the rows in `rows`.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: &[usize], rows: &[usize]) -> Var<'t> {
    let (n, k) = logits.shape();
    let mut mask = Array2::zeros((n, k));
    for &r in rows {
        mask[[r, labels[r]]] = 1.0;
    }
    let mask = logits.tape().constant(mask);
    -(logits.log_softmax_rows() * mask).sum().scale(1.0 / rows.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::sample_feature_map;
    use crate::manifold;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use crate::nn::tape::Tape;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball_rows(n: usize, d: usize, kappa: f64, radius: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        for mut row in x.rows_mut() {
            let r: f64 = row.dot(&row);
            let r = r.sqrt();
            row *= rng.random_range(0.05..radius) / (r * kappa.abs().sqrt());
        }
        x
    }

    fn all_coords() -> GradCheckOptions {
        GradCheckOptions {
            coords: None,
            ..Default::default()
        }
    }

    #[test]
    fn tape_gyro_ops_match_plain_versions() {
        for kappa in [-1.0, 1.0, -0.5] {
            let x = ball_rows(6, 3, kappa, 0.8, 1);
            let y = ball_rows(6, 3, kappa, 0.8, 2);
            let t = Tape::new();
            let (xv, yv) = (t.constant(x.clone()), t.constant(y.clone()));
            let add = mobius_add(xv, yv, kappa);
            let dist = gyro_distance(xv, yv, kappa);
            let log = log_map_zero(xv, kappa);
            for i in 0..6 {
                let ea = manifold::mobius_add(x.row(i), y.row(i), kappa);
                let ed = manifold::distance(x.row(i), y.row(i), kappa);
                let el = manifold::log0(x.row(i), kappa);
                assert!((&add.value().row(i) - &ea).iter().all(|v| v.abs() < 1e-12));
                assert!((dist.value()[[i, 0]] - ed).abs() < 1e-12);
                assert!((&log.value().row(i) - &el).iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn matvec_scalar_matches_plain_version() {
        let x = ball_rows(5, 4, -1.0, 0.9, 3);
        let w = array![[0.3], [-0.5], [0.1], [0.7]];
        let t = Tape::new();
        let out = gyro_matvec_scalar(t.constant(x.clone()), t.constant(w.clone()), -1.0);
        for i in 0..5 {
            let e = manifold::mobius_matvec(w.t(), x.row(i), -1.0);
            assert!((out.value()[[i, 0]] - e[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn waves_match_feature_map() {
        for (kappa, form) in [
            (-1.0, HorocycleForm::Busemann),
            (1.0, HorocycleForm::Busemann),
            (-1.0, HorocycleForm::Literal),
            (0.0, HorocycleForm::Busemann),
        ] {
            let spec = sample_feature_map(kappa, 3, 16, 5).unwrap().with_form(form);
            let x = ball_rows(4, 3, if kappa == 0.0 { -1.0 } else { kappa }, 0.6, 4);
            let t = Tape::new();
            let out = feature_waves(t.constant(x.clone()), &spec);
            let expected = spec.apply_rows(x.view()).unwrap();
            let err = (&*out.value() - &expected)
                .iter()
                .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
            assert!(err < 1e-12, "{kappa} {form:?}: {err}");
        }
    }

    #[test]
    fn gyro_distance_gradients() {
        let x = ball_rows(3, 4, -1.0, 0.8, 7);
        let y = ball_rows(3, 4, -1.0, 0.8, 8);
        let r = grad_check(
            |_, v| gyro_distance(v[0], v[1], -1.0).sum(),
            &[x, y],
            all_coords(),
        );
        assert!(r.passed(), "{}", r.max_rel_error);
    }

    #[test]
    fn geometric_op_gradients() {
        for kappa in [-1.0, 1.0] {
            let x = ball_rows(4, 3, kappa, 0.7, 9);
            let w = array![[0.2], [-0.4], [0.3]];
            let spec = sample_feature_map(kappa, 3, 8, 2).unwrap();
            let r = grad_check(
                |t, v| {
                    let b = t.constant(array![[0.05]]);
                    let s = mobius_add_scalar(gyro_matvec_scalar(v[0], v[1], kappa), b, kappa);
                    s.sum() + log_map_zero(v[0], kappa).sin().sum() + feature_waves(v[0], &spec).sum()
                },
                &[x, w],
                all_coords(),
            );
            assert!(r.passed(), "kappa {kappa}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn artan_ratio_smooth_at_zero() {
        for kappa in [-1.0, 1.0] {
            let r = array![[0.0], [1e-7], [0.3]];
            let report = grad_check(|_, v| artan_ratio(v[0], kappa).sum(), &[r], all_coords());
            assert!(report.passed(), "{}", report.max_rel_error);
        }
    }

    #[test]
    fn lazy_walk_matches_matrix() {
        let a = array![[0.0, 1.0, 0.5, 0.0], [1.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
        let s = array![[1.0], [2.0], [-1.0], [4.0]];
        let t = Tape::new();
        let out = lazy_walk_apply(t.constant(a.clone()), t.constant(s.clone()), 0.3);
        let l = crate::graph::lazy_walk_matrix(&a, 0.3);
        let expected = l.dot(&s);
        assert!((&*out.value() - &expected).iter().all(|v| v.abs() < 1e-14));
        let r = grad_check(
            |_, v| lazy_walk_apply(v[0], v[1], 0.3).square().sum(),
            &[a + 0.1, s],
            all_coords(),
        );
        assert!(r.passed(), "{}", r.max_rel_error);
    }

    #[test]
    fn gcn_normalize_of_identity() {
        let t = Tape::new();
        let i = Array2::<f64>::eye(3);
        let out = gcn_normalize(t.constant(i.clone()));
        assert_eq!(*out.value(), i);
    }

    #[test]
    fn infonce_examples() {
        let t = Tape::new();
        let one = t.constant(array![[0.3, -0.2]]);
        assert!(infonce(one, one).item().abs() < 1e-15);
        let e = t.constant(Array2::eye(2));
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((infonce(e, e).item() - expected).abs() < 1e-12);
        assert!((expected - 0.31326).abs() < 1e-5);
        let z = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let swapped = z.select(Axis(0), &[1, 0, 2]);
        let aligned = infonce(t.constant(z.clone()), t.constant(z.clone())).item();
        let mismatched = infonce(t.constant(z), t.constant(swapped)).item();
        assert!(mismatched > aligned);
        // stable for large scores
        let big = t.constant(array![[500.0, 0.0], [0.0, 500.0]]);
        assert!(infonce(big, big).item().is_finite());
    }

    #[test]
    fn loss_gradients() {
        let za = ball_rows(5, 3, -1.0, 0.9, 10);
        let zb = ball_rows(5, 3, -1.0, 0.9, 11);
        let r = grad_check(|_, v| infonce(v[0], v[1]), &[za.clone(), zb], all_coords());
        assert!(r.passed(), "{}", r.max_rel_error);
        let a = Array2::from_shape_fn((5, 5), |(i, j)| 0.2 + 0.1 * ((i * 3 + j * 7) % 5) as f64);
        let a = &a + &a.t();
        let r = grad_check(
            |_, v| {
                let h = gcn_normalize(v[0]).matmul(v[1]);
                cross_entropy(h, &[0, 1, 2, 0, 1], &[0, 2, 3]) + pairwise_diff(v[1].sum_rows()).abs().sum()
            },
            &[a, za],
            all_coords(),
        );
        assert!(r.passed(), "{}", r.max_rel_error);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let t = Tape::new();
        let logits = t.constant(Array2::zeros((4, 3)));
        let ce = cross_entropy(logits, &[0, 1, 2, 0], &[0, 1]);
        assert!((ce.item() - 3f64.ln()).abs() < 1e-14);
    }
}
