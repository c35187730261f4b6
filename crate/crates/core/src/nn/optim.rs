use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::manifold::{self, GyroPoint};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam over a fixed list of tensors; moment buffers are created on the
/// first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    step: i32,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            weight_decay: 0.0,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim())))
                .collect();
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let (lr, wd) = (self.lr, self.weight_decay);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                });
        }
    }
}

/// Adam moments of one gyrovector.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannianState {
    pub m: Array1<f64>,
    pub v: Array1<f64>,
    pub step: i32,
}

impl RiemannianState {
    pub fn new(dim: usize) -> Self {
        RiemannianState {
            m: Array1::zeros(dim),
            v: Array1::zeros(dim),
            step: 0,
        }
    }
}

/// One Riemannian Adam step: moments of the rescaled gradient, then a Möbius
/// retraction `x ⊕ (-lr · m̂ / (√v̂ + ε))` projected back into the ball.
pub fn riemannian_update(
    x: &GyroPoint,
    grad: ArrayView1<f64>,
    lr: f64,
    state: &mut RiemannianState,
) -> GyroPoint {
    let next = riemannian_step_raw(x.coords().view(), grad, x.kappa(), lr, state);
    GyroPoint::projected(next, x.kappa())
}

fn riemannian_step_raw(
    x: ArrayView1<f64>,
    grad: ArrayView1<f64>,
    kappa: f64,
    lr: f64,
    state: &mut RiemannianState,
) -> Array1<f64> {
    let lambda = manifold::conformal_factor(x, kappa);
    let rgrad = &grad / (lambda * lambda);
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step);
    let c2 = 1.0 - BETA2.powi(state.step);
    let mut delta = Array1::zeros(x.len());
    Zip::from(&mut delta)
        .and(&rgrad)
        .and(&mut state.m)
        .and(&mut state.v)
        .for_each(|d, &g, m, v| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *d = -lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        });
    manifold::mobius_add(x, delta.view(), kappa)
}

/// Riemannian Adam over the rows of an embedding matrix, one gyrovector per
/// row, all of curvature `kappa`.
#[derive(Debug, Clone)]
pub struct RiemannianAdam {
    pub lr: f64,
    pub kappa: f64,
    states: Vec<RiemannianState>,
}

impl RiemannianAdam {
    pub fn new(lr: f64, kappa: f64) -> Self {
        RiemannianAdam {
            lr,
            kappa,
            states: Vec::new(),
        }
    }

    pub fn step(&mut self, x: &mut Array2<f64>, egrad: &Array2<f64>) {
        if self.states.is_empty() {
            self.states = (0..x.nrows()).map(|_| RiemannianState::new(x.ncols())).collect();
        }
        for (i, state) in self.states.iter_mut().enumerate() {
            let next = riemannian_step_raw(x.row(i), egrad.row(i), self.kappa, self.lr, state);
            x.row_mut(i).assign(&manifold::project(next, self.kappa));
        }
    }
}
