use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::gcn_normalize;
use super::tape::{Tape, Var};

/// Two-layer graph convolution: `Â · ReLU(Â H W₁ + b₁) · W₂ + b₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// The parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GcnVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl GcnParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        GcnParams {
            w1: glorot(input, hidden, rng),
            b1: Array2::zeros((1, hidden)),
            w2: glorot(hidden, output, rng),
            b2: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn on<'t>(&self, tape: &'t Tape) -> GcnVars<'t> {
        GcnVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl<'t> GcnVars<'t> {
    pub fn all(&self) -> [Var<'t>; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Forward pass with an already normalized propagation matrix. `hidden_mask`
    /// (e.g. inverted dropout) multiplies the hidden activations.
    pub fn propagate(&self, a_hat: Var<'t>, h: Var<'t>, hidden_mask: Option<Var<'t>>) -> Var<'t> {
        let mut hidden = (a_hat.matmul(h.matmul(self.w1)) + self.b1).relu();
        if let Some(mask) = hidden_mask {
            hidden = hidden * mask;
        }
        a_hat.matmul(hidden.matmul(self.w2)) + self.b2
    }
}

/// GCN on a self-looped, nonnegative `a_star`.
pub fn gcn_forward<'t>(a_star: Var<'t>, h: Var<'t>, params: &GcnVars<'t>) -> Var<'t> {
    params.propagate(gcn_normalize(a_star), h, None)
}

/// Plain-array convenience wrapper around [`gcn_forward`].
pub fn gcn_forward_values(a_star: &Array2<f64>, h: &Array2<f64>, params: &GcnParams) -> Array2<f64> {
    let tape = Tape::new();
    let vars = GcnVars {
        w1: tape.constant(params.w1.clone()),
        b1: tape.constant(params.b1.clone()),
        w2: tape.constant(params.w2.clone()),
        b2: tape.constant(params.b2.clone()),
    };
    let out = gcn_forward(tape.constant(a_star.clone()), tape.constant(h.clone()), &vars);
    let v = out.value().clone();
    v
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_params(d: usize) -> GcnParams {
        GcnParams {
            w1: Array2::eye(d),
            b1: Array2::zeros((1, d)),
            w2: Array2::eye(d),
            b2: Array2::zeros((1, d)),
        }
    }

    #[test]
    fn identity_graph_and_weights() {
        let h = array![[0.5, 1.0], [2.0, 0.0], [0.1, 0.3]];
        let out = gcn_forward_values(&Array2::eye(3), &h, &identity_params(2));
        assert_eq!(out, h);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut p = identity_params(2);
        p.w1.fill(0.0);
        p.w2.fill(0.0);
        p.b2 = array![[0.7, -0.2]];
        let out = gcn_forward_values(&Array2::eye(3), &array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], &p);
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.7, -0.2]);
        }
    }

    #[test]
    fn isolated_nodes_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GcnParams::init(3, 8, 4, &mut rng);
        let a = Array2::eye(2);
        let h = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]];
        let mut h2 = h.clone();
        h2[[0, 1]] += 1.0;
        let o1 = gcn_forward_values(&a, &h, &p);
        let o2 = gcn_forward_values(&a, &h2, &p);
        assert_eq!(o1.row(1), o2.row(1));
        assert_ne!(o1.row(0), o2.row(0));
    }

    #[test]
    fn gradients_through_graph_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GcnParams::init(3, 5, 2, &mut rng);
        let a = array![[1.0, 0.6, 0.2], [0.6, 1.0, 0.9], [0.2, 0.9, 1.0]];
        let h = array![[0.1, -0.2, 0.3], [0.4, 0.5, -0.6], [0.9, 0.1, 0.2]];
        let r = grad_check(
            |_, v| {
                let vars = GcnVars {
                    w1: v[2],
                    b1: v[3],
                    w2: v[4],
                    b2: v[5],
                };
                gcn_forward(v[0], v[1], &vars).square().sum()
            },
            &[a, h, p.w1, p.b1, p.w2, p.b2],
            GradCheckOptions {
                coords: None,
                ..Default::default()
            },
        );
        assert!(r.passed(), "{}", r.max_rel_error);
    }
}
