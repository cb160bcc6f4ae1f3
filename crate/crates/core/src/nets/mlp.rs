use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};

/// How the final linear layer of a network is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    Orthogonal(f64),
    Zero,
}

/// Random `[rows, cols]` matrix with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // `short` orthonormal vectors of length `long`, modified Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
    out
}

/// Adds `{prefix}.w` (`[inputs, outputs]`) and `{prefix}.b` to `store`.
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    inputs: usize,
    outputs: usize,
    init: HeadInit,
    rng: &mut R,
) {
    let w = match init {
        HeadInit::Orthogonal(gain) => orthogonal(inputs, outputs, gain, rng),
        HeadInit::Zero => vec![0.0; inputs * outputs],
    };
    store.insert(format!("{prefix}.w"), Tensor::new(vec![inputs, outputs], w));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[outputs]));
}

pub fn linear<'g>(g: &'g Graph, store: &ParamStore, prefix: &str, x: Var<'g>) -> Var<'g> {
    let w = g.param(store, &format!("{prefix}.w"));
    let b = g.param(store, &format!("{prefix}.b"));
    x.matmul(w).add_row(b)
}

/// Tanh MLP: hidden layers `{prefix}.h0..`, linear output `{prefix}.out`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub prefix: String,
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl MlpSpec {
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, head: HeadInit, rng: &mut R) {
        let mut fan_in = self.inputs;
        for (i, &h) in self.hidden.iter().enumerate() {
            init_linear(
                store,
                &format!("{}.h{i}", self.prefix),
                fan_in,
                h,
                HeadInit::Orthogonal(2f64.sqrt()),
                rng,
            );
            fan_in = h;
        }
        init_linear(store, &format!("{}.out", self.prefix), fan_in, self.outputs, head, rng);
    }

    /// Hidden representation after the last tanh layer.
    pub fn trunk<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Var<'g> {
        let mut h = x;
        for i in 0..self.hidden.len() {
            h = linear(g, store, &format!("{}.h{i}", self.prefix), h).tanh();
        }
        h
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Var<'g> {
        let h = self.trunk(g, store, x);
        linear(g, store, &format!("{}.out", self.prefix), h)
    }
}
