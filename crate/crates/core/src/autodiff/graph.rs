//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns
//! the gradient of that scalar with respect to every node that depends on a
//! differentiable leaf. Parameter gradients can then be accumulated into a
//! [`ParamStore`].
//!
//! Matrices are row-major `[rows, cols]`; vectors of length `n` are treated
//! as `[1, n]` by the row-wise operations.

use std::cell::{Ref, RefCell};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    BroadcastRows(usize),
    ConcatCols(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Ln(usize),
    Exp(usize),
    Abs(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowSums(usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

impl Node {
    fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }
}

/// Tape of recorded operations. Rebuilt for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let n = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &n.shape)
            .finish()
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss
    /// through a differentiable path.
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the matching entries of `store`.
    /// Leaves whose name is not in `store` are skipped.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        let nodes = graph.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            let (Some(name), Some(g)) = (&node.param, &self.grads[id]) else {
                continue;
            };
            if let Some(t) = store.get_mut(name) {
                let acc = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
            param: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    /// Differentiable leaf (e.g. an input perturbation).
    pub fn input(&self, t: Tensor) -> Var<'_> {
        self.push(t.shape, t.data, Op::Leaf, true)
    }

    /// Leaf backed by a named entry of `store`. Panics if the name is absent.
    pub fn param(&self, store: &ParamStore, name: &str) -> Var<'_> {
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true);
        self.nodes.borrow_mut()[v.id].param = Some(name.to_string());
        v
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.id].data.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(nodes[loss.id].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and accumulates into each store.
    pub fn backward_into(
        &self,
        loss: Var<'_>,
        stores: &mut [&mut ParamStore],
    ) -> Result<Gradients, AutodiffError> {
        let grads = self.backward(loss)?;
        for s in stores.iter_mut() {
            grads.accumulate_into(self, s);
        }
        Ok(grads)
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].data.len();
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.data;
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].rows(), nodes[a].cols());
            let n = nodes[b].cols();
            let ad = &nodes[a].data;
            let bd = &nodes[b].data;
            // dA = dC * B^T
            add_into(grads, nodes, a, |ga| unsafe {
                matrixmultiply::dgemm(
                    m,
                    n,
                    k,
                    1.0,
                    g.as_ptr(),
                    n as isize,
                    1,
                    bd.as_ptr(),
                    1,
                    n as isize,
                    1.0,
                    ga.as_mut_ptr(),
                    k as isize,
                    1,
                );
            });
            // dB = A^T * dC
            add_into(grads, nodes, b, |gb| unsafe {
                matrixmultiply::dgemm(
                    k,
                    m,
                    n,
                    1.0,
                    ad.as_ptr(),
                    1,
                    k as isize,
                    g.as_ptr(),
                    n as isize,
                    1,
                    1.0,
                    gb.as_mut_ptr(),
                    n as isize,
                    1,
                );
            });
        }
        Op::AddRow(a, bias) => {
            add_into(grads, nodes, a, |ga| {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            });
            let c = nodes[bias].data.len();
            add_into(grads, nodes, bias, |gb| {
                for row in g.chunks(c) {
                    for (x, y) in gb.iter_mut().zip(row) {
                        *x += y;
                    }
                }
            });
        }
        Op::BroadcastRows(a) => {
            let c = nodes[a].data.len();
            add_into(grads, nodes, a, |ga| {
                for row in g.chunks(c) {
                    for (x, y) in ga.iter_mut().zip(row) {
                        *x += y;
                    }
                }
            });
        }
        Op::ConcatCols(a, b) => {
            let ca = nodes[a].cols();
            let cb = nodes[b].cols();
            let w = ca + cb;
            add_into(grads, nodes, a, |ga| {
                for (r, row) in g.chunks(w).enumerate() {
                    for j in 0..ca {
                        ga[r * ca + j] += row[j];
                    }
                }
            });
            add_into(grads, nodes, b, |gb| {
                for (r, row) in g.chunks(w).enumerate() {
                    for j in 0..cb {
                        gb[r * cb + j] += row[ca + j];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            add_into(grads, nodes, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            add_into(grads, nodes, b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::Sub(a, b) => {
            add_into(grads, nodes, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            add_into(grads, nodes, b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (&nodes[a].data, &nodes[b].data);
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * bd[i];
                }
            });
            add_into(grads, nodes, b, |gb| {
                for i in 0..gb.len() {
                    gb[i] += g[i] * ad[i];
                }
            });
        }
        Op::Minimum(a, b) => {
            // ties route the gradient to the first argument
            let (ad, bd) = (&nodes[a].data, &nodes[b].data);
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    if ad[i] <= bd[i] {
                        ga[i] += g[i];
                    }
                }
            });
            add_into(grads, nodes, b, |gb| {
                for i in 0..gb.len() {
                    if ad[i] > bd[i] {
                        gb[i] += g[i];
                    }
                }
            });
        }
        Op::Neg(a) => add_into(grads, nodes, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x -= y)),
        Op::Scale(a, k) => {
            add_into(grads, nodes, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += k * y))
        }
        Op::AddScalar(a) => {
            add_into(grads, nodes, a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y))
        }
        Op::Tanh(a) => add_into(grads, nodes, a, |ga| {
            for i in 0..ga.len() {
                ga[i] += g[i] * (1.0 - out[i] * out[i]);
            }
        }),
        Op::Sigmoid(a) => add_into(grads, nodes, a, |ga| {
            for i in 0..ga.len() {
                ga[i] += g[i] * out[i] * (1.0 - out[i]);
            }
        }),
        Op::Softplus(a) => {
            let ad = &nodes[a].data;
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * sigmoid(ad[i]);
                }
            })
        }
        Op::Ln(a) => {
            let ad = &nodes[a].data;
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] / ad[i];
                }
            })
        }
        Op::Exp(a) => add_into(grads, nodes, a, |ga| {
            for i in 0..ga.len() {
                ga[i] += g[i] * out[i];
            }
        }),
        Op::Abs(a) => {
            let ad = &nodes[a].data;
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    let s = if ad[i] > 0.0 {
                        1.0
                    } else if ad[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[i] += g[i] * s;
                }
            })
        }
        Op::Square(a) => {
            let ad = &nodes[a].data;
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += 2.0 * g[i] * ad[i];
                }
            })
        }
        Op::Clamp(a, lo, hi) => {
            let ad = &nodes[a].data;
            add_into(grads, nodes, a, |ga| {
                for i in 0..ga.len() {
                    if ad[i] >= lo && ad[i] <= hi {
                        ga[i] += g[i];
                    }
                }
            })
        }
        Op::Sum(a) => add_into(grads, nodes, a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::Mean(a) => {
            let k = g[0] / nodes[a].data.len() as f64;
            add_into(grads, nodes, a, |ga| ga.iter_mut().for_each(|x| *x += k))
        }
        Op::RowSums(a) => {
            let c = nodes[a].cols();
            add_into(grads, nodes, a, |ga| {
                for (r, row) in ga.chunks_mut(c).enumerate() {
                    row.iter_mut().for_each(|x| *x += g[r]);
                }
            })
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    fn node(&self) -> Ref<'_, Node> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().shape.clone()
    }

    pub fn rows(&self) -> usize {
        self.node().rows()
    }

    pub fn cols(&self) -> usize {
        self.node().cols()
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        let n = self.node();
        Tensor::new(n.shape.clone(), n.data.clone())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node().data.clone()
    }

    pub fn item(&self) -> f64 {
        let n = self.node();
        assert_eq!(n.data.len(), 1, "item() on non-scalar var {:?}", n.shape);
        n.data[0]
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.value())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let (shape, data) = {
            let n = self.node();
            (n.shape.clone(), n.data.iter().map(|&x| f(x)).collect())
        };
        let rg = self.requires_grad();
        self.graph.push(shape, data, op, rg)
    }

    fn binary(&self, other: Var<'g>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'g> {
        let (shape, data) = {
            let a = self.node();
            let b = other.node();
            assert_eq!(
                a.data.len(),
                b.data.len(),
                "{name}: shape mismatch {:?} vs {:?}",
                a.shape,
                b.shape
            );
            (
                a.shape.clone(),
                a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            )
        };
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph.push(shape, data, op, rg)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&self, other: Var<'g>) -> Var<'g> {
        let (m, k, n, c) = {
            let a = self.node();
            let b = other.node();
            let (m, k) = (a.rows(), a.cols());
            let (k2, n) = (b.rows(), b.cols());
            assert_eq!(k, k2, "matmul: shape mismatch {:?} x {:?}", a.shape, b.shape);
            let mut c = vec![0.0; m * n];
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    k as isize,
                    1,
                    b.data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            (m, k, n, c)
        };
        let _ = k;
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph.push(vec![m, n], c, Op::MatMul(self.id, other.id), rg)
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, bias: Var<'g>) -> Var<'g> {
        let (shape, data) = {
            let a = self.node();
            let b = bias.node();
            let c = a.cols();
            assert_eq!(b.data.len(), c, "add_row: shape mismatch {:?} + {:?}", a.shape, b.shape);
            let mut d = a.data.clone();
            for row in d.chunks_mut(c) {
                for (x, y) in row.iter_mut().zip(&b.data) {
                    *x += y;
                }
            }
            (vec![a.rows(), c], d)
        };
        let rg = self.graph.rg(&[self.id, bias.id]);
        self.graph.push(shape, data, Op::AddRow(self.id, bias.id), rg)
    }

    /// Repeats a single row `rows` times.
    pub fn broadcast_rows(&self, rows: usize) -> Var<'g> {
        let (c, data) = {
            let a = self.node();
            let c = a.data.len();
            let mut d = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                d.extend_from_slice(&a.data);
            }
            (c, d)
        };
        let rg = self.requires_grad();
        self.graph.push(vec![rows, c], data, Op::BroadcastRows(self.id), rg)
    }

    /// `[r,c1] ++ [r,c2] -> [r,c1+c2]`
    pub fn concat_cols(&self, other: Var<'g>) -> Var<'g> {
        let (shape, data) = {
            let a = self.node();
            let b = other.node();
            assert_eq!(a.rows(), b.rows(), "concat_cols: row mismatch {:?} / {:?}", a.shape, b.shape);
            let (ca, cb) = (a.cols(), b.cols());
            let mut d = Vec::with_capacity(a.rows() * (ca + cb));
            for r in 0..a.rows() {
                d.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
                d.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
            }
            (vec![a.rows(), ca + cb], d)
        };
        let rg = self.graph.rg(&[self.id, other.id]);
        self.graph.push(shape, data, Op::ConcatCols(self.id, other.id), rg)
    }

    pub fn add(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn minimum(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, "minimum", Op::Minimum(self.id, other.id), f64::min)
    }

    pub fn neg(&self) -> Var<'g> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, k: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, k), |x| k * x)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + k)
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    /// `log(1 + exp(x))`
    pub fn softplus(&self) -> Var<'g> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn abs(&self) -> Var<'g> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn square(&self) -> Var<'g> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        assert!(lo <= hi, "clamp: empty interval [{lo}, {hi}]");
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> Var<'g> {
        let s = self.node().data.iter().sum();
        let rg = self.requires_grad();
        self.graph.push(vec![], vec![s], Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'g> {
        let s = {
            let n = self.node();
            n.data.iter().sum::<f64>() / n.data.len() as f64
        };
        let rg = self.requires_grad();
        self.graph.push(vec![], vec![s], Op::Mean(self.id), rg)
    }

    /// `[r,c] -> [r,1]`
    pub fn row_sums(&self) -> Var<'g> {
        let (r, d) = {
            let n = self.node();
            let c = n.cols();
            (n.rows(), n.data.chunks(c).map(|row| row.iter().sum()).collect())
        };
        let rg = self.requires_grad();
        self.graph.push(vec![r, 1], d, Op::RowSums(self.id), rg)
    }
}
