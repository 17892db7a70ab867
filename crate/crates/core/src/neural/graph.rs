//! Tape-based reverse-mode differentiation over small dense arrays.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and backward is a single reverse sweep.

use std::collections::HashMap;

use glam::DVec2;

use super::store::{ParamGrads, ParamId, ParamStore};
use crate::error::{NspError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MatVec(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, op: Op) -> Var {
        self.nodes.push(Node { value, rows, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let rows = value.len();
        self.push(value, rows, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(vec![x])
    }

    pub fn vec2(&mut self, v: DVec2) -> Var {
        self.constant(vec![v.x, v.y])
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.tensor(id);
        let v = self.push(t.data.clone(), t.rows, Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn vec2_value(&self, v: Var) -> DVec2 {
        let d = &self.nodes[v.0].value;
        DVec2::new(d[0], d[1])
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn broadcast(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let value: Vec<f64> = match (x.len(), y.len()) {
            (n, m) if n == m => x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect(),
            (1, _) => y.iter().map(|q| f(x[0], *q)).collect(),
            (_, 1) => x.iter().map(|p| f(*p, y[0])).collect(),
            (n, m) => panic!("broadcast of incompatible lengths {n} and {m}"),
        };
        let rows = value.len();
        self.push(value, rows, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let rows = self.nodes[a.0].rows;
        self.push(value, rows, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], 1, Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.sum(sq);
        self.sqrt(s)
    }

    /// `w` is a row-major matrix with `rows` set at creation; `x` a vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let rows = self.nodes[w.0].rows;
        let (wv, xv) = (self.value(w), self.value(x));
        let cols = xv.len();
        assert_eq!(wv.len(), rows * cols, "matvec shape mismatch");
        let value: Vec<f64> =
            wv.chunks_exact(cols).map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum()).collect();
        self.push(value, rows, Op::MatVec(w, x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        let rows = value.len();
        self.push(value, rows, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a)[start..start + len].to_vec();
        self.push(value, len, Op::Slice(a, start))
    }

    pub fn component(&mut self, a: Var, i: usize) -> Var {
        self.slice(a, i, 1)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let n = self.dim(out);
        if n != 1 {
            return Err(NspError::NonScalarOutput(n));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);

        for i in (0..=out.0).rev() {
            let Some(dz) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate_broadcast(&mut grads, self, *a, &dz, |_| 1.0);
                    accumulate_broadcast(&mut grads, self, *b, &dz, |_| 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(&mut grads, self, *a, &dz, |_| 1.0);
                    accumulate_broadcast(&mut grads, self, *b, &dz, |_| -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate_broadcast(&mut grads, self, *a, &dz, |k| pick(bv, k));
                    accumulate_broadcast(&mut grads, self, *b, &dz, |k| pick(av, k));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate_broadcast(&mut grads, self, *a, &dz, |k| 1.0 / pick(bv, k));
                    accumulate_broadcast(&mut grads, self, *b, &dz, |k| {
                        let y = pick(bv, k);
                        -pick(av, k) / (y * y)
                    });
                }
                Op::Neg(a) => accumulate(&mut grads, *a, dz.iter().map(|g| -g)),
                Op::Scale(a, k) => accumulate(&mut grads, *a, dz.iter().map(|g| g * k)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, dz.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, dz.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, dz.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, dz.iter().zip(y).map(|(g, e)| g * e));
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, dz.iter().zip(y).map(|(g, r)| g * 0.5 / r));
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, dz.iter().zip(x).map(|(g, x)| g * 2.0 * x));
                }
                Op::Sum(a) => {
                    let n = self.dim(*a);
                    accumulate(&mut grads, *a, std::iter::repeat_n(dz[0], n));
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let cols = xv.len();
                    let dw = dz.iter().flat_map(|g| xv.iter().map(move |x| g * x));
                    accumulate(&mut grads, *w, dw);
                    let mut dx = vec![0.0; cols];
                    for (g, row) in dz.iter().zip(wv.chunks_exact(cols)) {
                        for (d, w) in dx.iter_mut().zip(row) {
                            *d += g * w;
                        }
                    }
                    accumulate(&mut grads, *x, dx.into_iter());
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.dim(*p);
                        accumulate(&mut grads, *p, dz[offset..offset + n].iter().copied());
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.dim(*a);
                    let mut full = vec![0.0; n];
                    full[*start..*start + dz.len()].copy_from_slice(&dz);
                    accumulate(&mut grads, *a, full.into_iter());
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(dz);
            }
        }

        let params = self.params.iter().filter_map(|(id, v)| grads[v.0].clone().map(|g| (*id, g))).collect();
        Ok(Gradients { nodes: grads, params })
    }
}

fn pick(v: &[f64], k: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[k]
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, contrib: impl Iterator<Item = f64>) {
    match &mut grads[target.0] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot => *slot = Some(contrib.collect()),
    }
}

/// Gradient into `target` of an elementwise op whose output has `dz.len()`
/// entries; a length-1 target was broadcast and receives the sum.
fn accumulate_broadcast(
    grads: &mut [Option<Vec<f64>>],
    graph: &Graph,
    target: Var,
    dz: &[f64],
    local: impl Fn(usize) -> f64,
) {
    let contrib = dz.iter().enumerate().map(|(k, g)| g * local(k));
    if graph.dim(target) == 1 && dz.len() > 1 {
        let total: f64 = contrib.sum();
        accumulate(grads, target, std::iter::once(total));
    } else {
        accumulate(grads, target, contrib);
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

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient of the output with respect to a leaf node (zeros if unreachable).
    pub fn wrt(&self, v: Var, graph: &Graph) -> Vec<f64> {
        self.nodes.get(v.0).and_then(|g| g.clone()).unwrap_or_else(|| vec![0.0; graph.dim(v)])
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn into_param_grads(self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros(store);
        for (id, g) in self.params {
            out.add(id, &g);
        }
        out
    }

    pub fn touched_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn linear_map_gradient() {
        let mut g = Graph::new();
        let w = g.scalar(2.0);
        let x = g.scalar(3.0);
        let y = g.mul(w, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(w, &g), vec![3.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut g = Graph::new();
        let z = g.scalar(0.0);
        let s = g.sigmoid(z);
        assert_eq!(g.backward(s).unwrap().wrt(z, &g), vec![0.25]);
    }

    #[test]
    fn vector_output_rejected() {
        let mut g = Graph::new();
        let v = g.constant(vec![1.0, 2.0]);
        assert!(matches!(g.backward(v), Err(NspError::NonScalarOutput(2))));
    }

    #[test]
    fn broadcast_scalar_receives_summed_gradient() {
        let mut g = Graph::new();
        let k = g.scalar(2.0);
        let v = g.constant(vec![1.0, 3.0]);
        let y = g.mul(k, v);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(k, &g), vec![4.0]);
        assert_eq!(grads.wrt(v, &g), vec![2.0, 2.0]);
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        type Build = fn(&mut Graph, Var) -> Var;
        let cases: Vec<(&str, Build, fn(f64) -> f64)> = vec![
            ("tanh", |g, x| g.tanh(x), f64::tanh),
            ("exp", |g, x| g.exp(x), f64::exp),
            ("sqrt", |g, x| g.sqrt(x), f64::sqrt),
            ("square", |g, x| g.square(x), |x| x * x),
            ("sigmoid", |g, x| g.sigmoid(x), sigmoid),
            ("recip", |g, x| {
                let one = g.scalar(1.0);
                g.div(one, x)
            }, |x| 1.0 / x),
        ];
        for (name, build, f) in cases {
            for x0 in [0.3, 1.7, 2.9] {
                let mut g = Graph::new();
                let x = g.scalar(x0);
                let y = build(&mut g, x);
                let analytic = g.backward(y).unwrap().wrt(x, &g)[0];
                let numeric = fd(f, x0);
                assert!((analytic - numeric).abs() < 1e-7 * numeric.abs().max(1.0), "{name} at {x0}");
            }
        }
    }

    #[test]
    fn matvec_gradients() {
        let mut store = ParamStore::new();
        let w_id = store.insert("w", super::super::store::Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), Default::default());
        let mut g = Graph::new();
        let w = g.param(&store, w_id);
        let x = g.constant(vec![1.0, -1.0, 2.0]);
        let y = g.matvec(w, x);
        assert_eq!(g.value(y), &[5.0, 11.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(w_id).unwrap(), &[1.0, -1.0, 2.0, 1.0, -1.0, 2.0]);
        assert_eq!(grads.wrt(x, &g), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let a = g.constant(vec![0.1, -0.4, 0.7]);
            let b = g.tanh(a);
            let c = g.mul(b, a);
            let d = g.exp(c);
            let e = g.concat(&[d, b]);
            let s = g.norm(e);
            let grads = g.backward(s).unwrap();
            grads.wrt(a, &g)
        };
        let (x, y) = (build(), build());
        assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
