//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value, the ids of
//! its inputs and a closure computing input gradients from the output
//! gradient. Nodes are appended in evaluation order, so walking the record
//! backwards from the loss is a valid reverse topological order. Scalars are
//! `1 x 1` matrices and binary operations broadcast like ndarray does.

use std::cell::{Ref, RefCell};
use std::ops;

use ndarray::{Array2, Axis, Zip};

type BackwardFn = Box<dyn Fn(&Backward<'_>) -> Vec<Option<Array2<f64>>>>;

struct Node {
    value: Array2<f64>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// What a backward closure can see.
pub struct Backward<'a> {
    nodes: &'a [Node],
    node: &'a Node,
    grad: &'a Array2<f64>,
}

impl Backward<'_> {
    pub fn grad(&self) -> &Array2<f64> {
        self.grad
    }

    pub fn input(&self, k: usize) -> &Array2<f64> {
        &self.nodes[self.node.parents[k]].value
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.node.value
    }

    pub fn needs(&self, k: usize) -> bool {
        self.nodes[self.node.parents[k]].requires_grad
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of the leaves that require them.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Array2<f64>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when nothing flowed into it.
    pub fn wrt(&self, v: Var<'_>) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(v.shape()))
    }
}

/// Reduces a broadcast gradient back to `shape` by summing the expanded axes.
pub fn sum_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if g.nrows() != shape.0 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if g.ncols() != shape.1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn dims(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn leaf(&self, value: Array2<f64>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a derived value. The closure returns one gradient per parent,
    /// `None` where [`Backward::needs`] is false.
    pub fn push(
        &self,
        value: Array2<f64>,
        parents: Vec<usize>,
        backward: impl Fn(&Backward<'_>) -> Vec<Option<Array2<f64>>> + 'static,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Gradients of the scalar `root` with respect to every leaf that tracks
    /// them. Intermediate gradients are freed as soon as they are consumed.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Array2::ones((1, 1)));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let ctx = Backward {
                nodes: &nodes,
                node,
                grad: &grad,
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.dim(), nodes[p].value.dim(), "gradient shape");
                match &mut grads[p] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single entry of a `1 x 1` value.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar");
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn map_value(&self, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Array2<f64> {
        f(&self.value())
    }

    fn zip_values(
        &self,
        other: Var<'t>,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Array2<f64> {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value, &nodes[other.id].value)
    }

    fn check_broadcast(&self, other: Var<'t>, op: &str) {
        let (a, b) = (self.shape(), other.shape());
        let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
        assert!(ok(a.0, b.0) && ok(a.1, b.1), "{op}: shapes {a:?} and {b:?} do not broadcast");
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let value = self.map_value(|x| x.mapv(&f));
        self.tape.push(value, vec![self.id], move |b| {
            let mut g = b.grad().clone();
            Zip::from(&mut g)
                .and(b.input(0))
                .and(b.output())
                .for_each(|g, &x, &y| *g *= df(x, y));
            vec![Some(g)]
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Clamps its argument just inside (-1, 1), like [`crate::manifold::artan_k`];
    /// no gradient flows through the clamped region.
    pub fn atanh(self) -> Var<'t> {
        const EDGE: f64 = 1.0 - 1e-15;
        self.unary(
            |x| x.clamp(-EDGE, EDGE).atanh(),
            |x, _| if x.abs() >= EDGE { 0.0 } else { 1.0 / (1.0 - x * x) },
        )
    }

    pub fn atan(self) -> Var<'t> {
        self.unary(f64::atan, |x, _| 1.0 / (1.0 + x * x))
    }

    pub fn tan(self) -> Var<'t> {
        self.unary(f64::tan, |_, y| 1.0 + y * y)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(f64::recip, |_, y| -y * y)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Gradient passes only where the input lies strictly inside the range.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    /// `tan` for κ > 0, `tanh` for κ < 0.
    pub fn tan_k(self, kappa: f64) -> Var<'t> {
        if kappa > 0.0 {
            self.tan()
        } else if kappa < 0.0 {
            self.tanh()
        } else {
            self
        }
    }

    /// `atan` for κ > 0, `atanh` for κ < 0.
    pub fn artan_k(self, kappa: f64) -> Var<'t> {
        if kappa > 0.0 {
            self.atan()
        } else if kappa < 0.0 {
            self.atanh()
        } else {
            self
        }
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a.1, b.0, "matmul: {a:?} x {b:?}");
        let value = self.zip_values(other, |x, y| x.dot(y));
        self.tape.push(value, vec![self.id, other.id], |b| {
            let g = b.grad();
            vec![
                b.needs(0).then(|| g.dot(&b.input(1).t())),
                b.needs(1).then(|| b.input(0).t().dot(g)),
            ]
        })
    }

    pub fn t(self) -> Var<'t> {
        let value = self.map_value(|x| x.t().to_owned());
        self.tape
            .push(value, vec![self.id], |b| vec![Some(b.grad().t().to_owned())])
    }

    /// Sum across columns: `N x d -> N x 1`.
    pub fn sum_rows(self) -> Var<'t> {
        let value = self.map_value(|x| x.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.tape.push(value, vec![self.id], |b| {
            let g = b.grad().broadcast(b.input(0).dim()).unwrap().to_owned();
            vec![Some(g)]
        })
    }

    /// Sum down rows: `N x d -> 1 x d`.
    pub fn sum_cols(self) -> Var<'t> {
        let value = self.map_value(|x| x.sum_axis(Axis(0)).insert_axis(Axis(0)));
        self.tape.push(value, vec![self.id], |b| {
            let g = b.grad().broadcast(b.input(0).dim()).unwrap().to_owned();
            vec![Some(g)]
        })
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.map_value(|x| Array2::from_elem((1, 1), x.sum()));
        self.tape.push(value, vec![self.id], |b| {
            vec![Some(Array2::from_elem(b.input(0).dim(), b.grad()[[0, 0]]))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    /// Diagonal of a square matrix as an `N x 1` column.
    pub fn diag(self) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r, c, "diag of a non-square matrix");
        let value = self.map_value(|x| x.diag().to_owned().insert_axis(Axis(1)));
        self.tape.push(value, vec![self.id], move |b| {
            let mut g = Array2::zeros((r, r));
            for i in 0..r {
                g[[i, i]] = b.grad()[[i, 0]];
            }
            vec![Some(g)]
        })
    }

    /// Euclidean norm of each row, `N x 1`; the gradient at a zero row is 0.
    pub fn row_norm(self) -> Var<'t> {
        let value = self.map_value(|x| x.map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1)));
        self.tape.push(value, vec![self.id], |b| {
            let x = b.input(0);
            let y = b.output();
            let g = b.grad();
            let mut out = Array2::zeros(x.dim());
            for ((i, j), o) in out.indexed_iter_mut() {
                if y[[i, 0]] > 0.0 {
                    *o = g[[i, 0]] * x[[i, j]] / y[[i, 0]];
                }
            }
            vec![Some(out)]
        })
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(self) -> Var<'t> {
        let value = self.map_value(|x| {
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
                row.mapv_inplace(|v| v - lse);
            }
            out
        });
        self.tape.push(value, vec![self.id], |b| {
            let g = b.grad();
            let soft = b.output().mapv(f64::exp);
            let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![Some(g - &(&soft * &gsum))]
        })
    }

    /// Horizontal concatenation.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let widths: Vec<usize> = parts.iter().map(|p| p.shape().1).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ")
        };
        tape.push(value, parts.iter().map(|p| p.id).collect(), move |b| {
            let mut start = 0;
            widths
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let g = b
                        .needs(k)
                        .then(|| b.grad().slice(ndarray::s![.., start..start + w]).to_owned());
                    start += w;
                    g
                })
                .collect()
        })
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &str,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        back: impl Fn(&Backward<'_>) -> (Option<Array2<f64>>, Option<Array2<f64>>) + 'static,
    ) -> Var<'t> {
        self.check_broadcast(other, name);
        let value = self.zip_values(other, f);
        self.tape.push(value, vec![self.id, other.id], move |b| {
            let (ga, gb) = back(b);
            vec![
                ga.map(|g| sum_to(g, dims(b.input(0)))),
                gb.map(|g| sum_to(g, dims(b.input(1)))),
            ]
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Broadcasts `g` to `shape` (for gradients of operands smaller than the
/// output).
fn full(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    g.broadcast(shape).expect("broadcast").to_owned()
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "add", |a, b| a + b, |b| {
            let g = b.grad();
            (b.needs(0).then(|| g.clone()), b.needs(1).then(|| g.clone()))
        })
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "sub", |a, b| a - b, |b| {
            let g = b.grad();
            (b.needs(0).then(|| g.clone()), b.needs(1).then(|| -g))
        })
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "mul", |a, b| a * b, |b| {
            let g = b.grad();
            let shape = g.dim();
            (
                b.needs(0).then(|| g * &full(b.input(1), shape)),
                b.needs(1).then(|| g * &full(b.input(0), shape)),
            )
        })
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "div", |a, b| a / b, |b| {
            let g = b.grad();
            let shape = g.dim();
            let den = full(b.input(1), shape);
            (
                b.needs(0).then(|| g / &den),
                b.needs(1).then(|| -(g * b.output()) / &den),
            )
        })
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.shift(rhs)
    }
}

impl<'t> ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.shift(-rhs)
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.scale(1.0 / rhs)
    }
}

impl<'t> ops::Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.shift(self)
    }
}

impl<'t> ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(-1.0).shift(self)
    }
}

impl<'t> ops::Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(self)
    }
}
